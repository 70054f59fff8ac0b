"""Hierarchical multi-label patch matching for occluded face identification.

Images are split into a hierarchy of patches. Each patch gets a local
classifier; a global model then corrects each patch's label using its
parents, children and adjacent siblings, and a final vote over all patches
names the identity.
"""
from .errors import HMLError
from .hierarchy import (
    FIVE_LEVEL_GRID,
    HierarchySpec,
    PatchHierarchy,
    PatchId,
    PatchRect,
    build_hierarchy,
    load_spec_file,
    texture_lifted_spec,
)
from .features import SampleSignature, extract_gray_signature, fit_pca, synth_occlusion
from .local import MatchingRecord, MatchingTable, predict_local, train_local
from .global_matchers import build_H, build_Z, solve_weights, train_global, vote_global
from .forest import train_forest, predict_forest
from .pipeline import Config, MatcherBundle, deploy, identify, load_config, train_matcher
from .bundle import load_bundle, save_bundle
from .report import EvaluationReport, evaluate
from .stats import ScoreTable, compare_methods, compute_ranks

__version__ = "0.1.0"

__all__ = [
    "HMLError", "FIVE_LEVEL_GRID", "HierarchySpec", "PatchHierarchy", "PatchId", "PatchRect",
    "build_hierarchy", "load_spec_file", "texture_lifted_spec", "SampleSignature",
    "extract_gray_signature", "fit_pca", "synth_occlusion", "MatchingRecord", "MatchingTable",
    "predict_local", "train_local", "build_H", "build_Z", "solve_weights", "train_global",
    "vote_global", "train_forest", "predict_forest", "Config", "MatcherBundle", "deploy",
    "identify", "load_config", "train_matcher", "load_bundle", "save_bundle",
    "EvaluationReport", "evaluate", "ScoreTable", "compare_methods", "compute_ranks",
]
