"""Global matching: correct each patch's local label using its related patches.

Three learners share the hierarchical matching matrix ``H`` (samples x related
patches, local labels):

* ``vote``    - majority of related labels, mean-score tie-break
* ``weights`` - sparse simplex weights fitted to the +-1 decision matrix
* ``forest``  - random forest over the label columns
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AllAbstain, DegenerateWeights, DimensionMismatch, MissingRecord, UnknownGlobalKind
from .forest import DEFAULT_MAX_DEPTH, DEFAULT_TREES, ForestModel, predict_forest, train_forest
from .hierarchy import PatchHierarchy, PatchId
from .local import ABSTAIN, ABSTAIN_LABEL, MatchingRecord, MatchingTable

GLOBAL_KINDS = ("vote", "weights", "forest")


@dataclass
class HMatrix:
    patch: PatchId
    columns: list[PatchId]
    labels: np.ndarray   # M x S, 0 = abstain
    scores: np.ndarray   # M x S

    @property
    def shape(self):
        return self.labels.shape


def build_H(table: MatchingTable, h: PatchHierarchy, patch: PatchId) -> HMatrix:
    cols = h.related_patches(patch)
    missing = [q for q in cols if q not in table]
    if missing:
        raise MissingRecord(f"no local matchings for {', '.join(map(str, missing))}")
    idx = [table.column(q) for q in cols]
    return HMatrix(patch, cols, table.labels[:, idx].copy(), table.scores[:, idx].copy())


# -- voting -------------------------------------------------------------------------

def _pick(labels: np.ndarray, mass: np.ndarray, mean_score: np.ndarray) -> int:
    """Index of the winner: largest mass, then largest mean score, then smallest label."""
    order = np.lexsort((labels, -mean_score, -mass))
    return int(order[0])


def vote_global(labels, scores) -> MatchingRecord:
    """Majority label among non-abstaining entries; ties -> higher mean score."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    live = labels != ABSTAIN_LABEL
    if not live.any():
        raise AllAbstain("every related patch abstained")
    cand, inv, counts = np.unique(labels[live], return_inverse=True, return_counts=True)
    means = np.bincount(inv, weights=scores[live]) / counts
    k = _pick(cand, counts.astype(np.float64), means)
    return MatchingRecord(int(cand[k]), float(means[k]))


def weighted_global_match(w, labels, scores) -> MatchingRecord:
    """Label with the largest summed weight; ties -> higher mean score.

    The returned score is the winning weight mass.
    """
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not (w.shape == labels.shape == scores.shape):
        raise DimensionMismatch(f"weights {w.shape}, labels {labels.shape}, scores {scores.shape}")
    live = labels != ABSTAIN_LABEL
    if not live.any():
        raise AllAbstain("every related patch abstained")
    cand, inv, counts = np.unique(labels[live], return_inverse=True, return_counts=True)
    mass = np.bincount(inv, weights=w[live], minlength=cand.shape[0])
    means = np.bincount(inv, weights=scores[live]) / counts
    # weight sums that differ only by rounding count as ties
    k = _pick(cand, np.round(mass, 12), means)
    return MatchingRecord(int(cand[k]), float(mass[k]))


# -- decision matrix and margins ---------------------------------------------------------

def build_Z(H, truth) -> np.ndarray:
    """+1 where a related patch's label equals the truth, -1 otherwise (abstain -> -1)."""
    labels = H.labels if isinstance(H, HMatrix) else np.atleast_2d(np.asarray(H))
    truth = np.asarray(truth).reshape(-1)
    if labels.shape[0] != truth.shape[0]:
        raise DimensionMismatch(f"H has {labels.shape[0]} rows, truth has {truth.shape[0]}")
    return np.where(labels == truth[:, None], 1.0, -1.0)


def ensemble_margin(w, z_row) -> float:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    z = np.asarray(z_row, dtype=np.float64).reshape(-1)
    if w.shape != z.shape:
        raise DimensionMismatch(f"weights have length {w.shape[0]}, row has {z.shape[0]}")
    return float(w @ z)


def ensemble_loss(w, Z) -> float:
    """Squared-margin loss ``||e - Z w||^2``."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != w.shape[0]:
        raise DimensionMismatch(f"Z has {Z.shape[1]} columns, weights have {w.shape[0]}")
    r = 1.0 - Z @ w
    return float(r @ r)


def weight_objective(w, Z, lam: float) -> float:
    """``||e' - Z' w||^2 + lam * ||w||_1`` with the sum-to-one row appended."""
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    return ensemble_loss(w, Z) + (1.0 - w.sum()) ** 2 + lam * np.abs(w).sum()


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.shape[0] + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1.0), 0.0)


def _largest_eigenvalue(G: np.ndarray, iters: int = 500, tol: float = 1e-12) -> float:
    """Power iteration for the top eigenvalue of a symmetric PSD matrix."""
    x = np.ones(G.shape[0]) / np.sqrt(G.shape[0])
    lam = 0.0
    for _ in range(iters):
        y = G @ x
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        new = float(x @ G @ x)
        if abs(new - lam) <= tol * max(new, 1.0):
            return new
        lam = new
    return lam


def renormalize(w) -> tuple[np.ndarray, bool]:
    """Scale ``w`` to sum to one; all-zero input falls back to uniform (flagged)."""
    w = np.asarray(w, dtype=np.float64)
    total = w.sum()
    if not total > 0:
        warnings.warn("weight solver returned all zeros; using uniform weights", DegenerateWeights)
        return np.full(w.shape[0], 1.0 / w.shape[0]), True
    return w / total, False


@dataclass
class WeightFit:
    weights: np.ndarray
    objective: list[float]
    n_iter: int
    degenerate: bool


def solve_weights(Z, lam: float = 0.1, tol: float = 1e-9, max_iter: int = 10_000,
                  full_output: bool = False):
    """Sparse nonnegative weights for the related patches of one patch.

    Minimises ``||e' - Z' w||^2 + lam ||w||_1`` with ``Z' = [Z; 1^T]`` and
    ``e' = [1; 1]`` by projected gradient steps of size ``1/L``, where ``L`` is
    the gradient's Lipschitz constant (twice the top eigenvalue of
    ``Z'^T Z'``, found by power iteration). Iterates are projected onto the
    probability simplex, so the result is always a valid weight vector. Stops
    when an iteration lowers the objective by less than ``tol``.

    With ``full_output=True`` returns a :class:`WeightFit` including the
    objective after every iteration.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    M, S = Z.shape
    if M < 1 or S < 1:
        raise DimensionMismatch(f"decision matrix must be non-empty, got {Z.shape}")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    Zp = np.vstack([Z, np.ones((1, S))])
    ep = np.ones(M + 1)
    L = 2.0 * _largest_eigenvalue(Zp.T @ Zp)
    step = 1.0 / L if L > 0 else 1.0

    w = np.full(S, 1.0 / S)
    f = weight_objective(w, Z, lam)
    history = [f]
    n_iter = 0
    if S > 1:
        for n_iter in range(1, max_iter + 1):
            grad = 2.0 * Zp.T @ (Zp @ w - ep) + lam
            w_new = project_simplex(w - step * grad)
            f_new = weight_objective(w_new, Z, lam)
            if f_new > f:  # cannot happen with step <= 1/L; guard against rounding
                break
            history.append(f_new)
            w, decrease, f = w_new, f - f_new, f_new
            if decrease < tol:
                break

    w, degenerate = renormalize(w)
    if full_output:
        return WeightFit(w, history, n_iter, degenerate)
    return w


# -- global models --------------------------------------------------------------------------

@dataclass
class GlobalModel:
    kind: str
    patch: PatchId
    weights: np.ndarray | None = None
    forest: ForestModel | None = None

    def predict(self, H: HMatrix | tuple) -> tuple[np.ndarray, np.ndarray]:
        """Global matching for every row of ``H``; all-abstain rows abstain."""
        labels, scores = (H.labels, H.scores) if isinstance(H, HMatrix) else H
        labels = np.atleast_2d(labels)
        scores = np.atleast_2d(scores)
        M = labels.shape[0]
        if self.kind == "forest":
            return self.forest.predict(labels)
        out_l = np.full(M, ABSTAIN_LABEL, dtype=np.int64)
        out_s = np.full(M, -np.inf)
        for m in range(M):
            if not np.any(labels[m] != ABSTAIN_LABEL):
                continue
            if self.kind == "vote":
                rec = vote_global(labels[m], scores[m])
            else:
                rec = weighted_global_match(self.weights, labels[m], scores[m])
            out_l[m], out_s[m] = rec
        return out_l, out_s

    def predict_row(self, labels, scores) -> MatchingRecord:
        lab, sco = self.predict((np.asarray(labels)[None, :], np.asarray(scores)[None, :]))
        if lab[0] == ABSTAIN_LABEL:
            return ABSTAIN
        return MatchingRecord(int(lab[0]), float(sco[0]))


def train_global(kind: str, H: HMatrix, truth, w_lambda: float = 0.1,
                 n_trees: int = DEFAULT_TREES, max_depth: int | None = DEFAULT_MAX_DEPTH,
                 seed: int = 0) -> GlobalModel:
    kind = kind.lower()
    if kind == "vote":
        return GlobalModel("vote", H.patch)
    if kind == "weights":
        Z = build_Z(H, truth)
        return GlobalModel("weights", H.patch, weights=solve_weights(Z, w_lambda))
    if kind == "forest":
        return GlobalModel("forest", H.patch,
                           forest=train_forest(H.labels, truth, n_trees, max_depth, seed))
    raise UnknownGlobalKind(f"unknown global kind {kind!r}; choose from {', '.join(GLOBAL_KINDS)}")


__all__ = [
    "GLOBAL_KINDS", "HMatrix", "GlobalModel", "WeightFit", "build_H", "vote_global",
    "weighted_global_match", "build_Z", "ensemble_margin", "ensemble_loss", "weight_objective",
    "solve_weights", "project_simplex", "renormalize", "train_global", "train_forest", "predict_forest",
    "ForestModel",
]
