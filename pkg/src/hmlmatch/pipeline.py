"""Training (local -> hierarchical global -> final vote) and deployment.

The gallery fits the local classifiers; a separate ``train`` split is matched
by them to build the hierarchical matching matrices the global models learn
from. Deployment replays the same chain on probes and finishes with a
majority vote over every patch's global matching.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import tomli

from .errors import (
    AllAbstain,
    ConfigConflict,
    EmptyGallery,
    EmptyProbeSet,
    EmptySplit,
    HierarchyMismatch,
    InvalidConfig,
    IoFailure,
    ManifestError,
    UnknownGlobalKind,
)
from .features import (
    PcaModel,
    SampleSignature,
    extract_gray_signature,
    fit_pca,
    load_signatures,
    read_pgm,
)
from .forest import DEFAULT_MAX_DEPTH, DEFAULT_TREES
from .global_matchers import GLOBAL_KINDS, GlobalModel, build_H, train_global, vote_global
from .hierarchy import (
    FIVE_LEVEL_GRID,
    HierarchySpec,
    PatchHierarchy,
    PatchId,
    build_hierarchy,
    load_spec_file,
    parse_levels,
    parse_size,
)
from .local import (
    ABSTAIN_LABEL,
    KINDS as LOCAL_KINDS,
    LocalClassifier,
    MatchingRecord,
    MatchingTable,
    local_match_all,
    map_maybe_parallel,
    train_local,
)

log = logging.getLogger(__name__)

FINAL_RULES = ("all_patches", "per_level")
SPLITS = ("gallery", "train", "probe")


# -- configuration --------------------------------------------------------------------

@dataclass
class Config:
    hierarchy_mode: str = "grid"
    levels: tuple = FIVE_LEVEL_GRID
    spec_file: str | None = None
    image_size: tuple | None = None
    feature_source: str = "gray"
    signatures: str | None = None
    local_kind: str = "crc"
    crc_lambda: float = 0.001
    global_kind: str = "weights"
    w_lambda: float = 0.1
    n_trees: int = DEFAULT_TREES
    max_depth: int | None = DEFAULT_MAX_DEPTH
    pca_dim: int | None = 100
    seed: int = 0
    final_rule: str = "all_patches"
    threads: int = 1

    def validate(self) -> "Config":
        if self.hierarchy_mode not in ("grid", "explicit"):
            raise InvalidConfig(f"hierarchy.mode must be grid or explicit, got {self.hierarchy_mode!r}")
        if self.hierarchy_mode == "explicit" and not self.spec_file:
            raise InvalidConfig("hierarchy.mode = explicit needs hierarchy.spec_file")
        if self.feature_source not in ("gray", "signatures"):
            raise InvalidConfig(f"features.source must be gray or signatures, got {self.feature_source!r}")
        if self.feature_source == "signatures" and self.hierarchy_mode == "grid":
            raise ConfigConflict("signature input needs an explicit hierarchy (hierarchy.mode = explicit)")
        if self.local_kind not in LOCAL_KINDS:
            raise InvalidConfig(f"local.kind must be one of {', '.join(LOCAL_KINDS)}")
        if self.global_kind not in GLOBAL_KINDS:
            raise UnknownGlobalKind(f"global.kind must be one of {', '.join(GLOBAL_KINDS)}, "
                                    f"got {self.global_kind!r}")
        if self.final_rule not in FINAL_RULES:
            raise InvalidConfig(f"final_rule must be one of {', '.join(FINAL_RULES)}")
        if self.crc_lambda < 0 or self.w_lambda < 0:
            raise InvalidConfig("regularisation parameters must be >= 0")
        if self.n_trees < 1:
            raise InvalidConfig("global.n_trees must be >= 1")
        return self

    def to_dict(self) -> dict:
        out = {}
        for key, attr in CONFIG_KEYS.items():
            value = getattr(self, attr)
            if isinstance(value, tuple):
                value = [list(v) if isinstance(v, tuple) else v for v in value]
            out[key] = value
        return out


CONFIG_KEYS = {
    "hierarchy.mode": "hierarchy_mode",
    "hierarchy.levels": "levels",
    "hierarchy.spec_file": "spec_file",
    "hierarchy.image_size": "image_size",
    "features.source": "feature_source",
    "features.signatures": "signatures",
    "local.kind": "local_kind",
    "local.crc_lambda": "crc_lambda",
    "global.kind": "global_kind",
    "global.w_lambda": "w_lambda",
    "global.n_trees": "n_trees",
    "global.max_depth": "max_depth",
    "pca.dim": "pca_dim",
    "seed": "seed",
    "final_rule": "final_rule",
    "threads": "threads",
}


def _flatten(doc: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in doc.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(attr: str, value):
    if attr == "levels":
        if isinstance(value, str):
            return parse_levels(value)
        return tuple((int(r), int(c)) for r, c in value)
    if attr == "image_size":
        if value in (None, "", "none"):
            return None
        if isinstance(value, str):
            return parse_size(value)
        return (int(value[0]), int(value[1]))
    if attr in ("max_depth", "pca_dim"):
        if value in (None, "", "none", 0, "0"):
            return None
        return int(value)
    if attr in ("n_trees", "seed", "threads"):
        return int(value)
    if attr in ("crc_lambda", "w_lambda"):
        return float(value)
    if attr in ("spec_file", "signatures"):
        return None if value in (None, "") else str(value)
    return str(value).lower()


def config_from_mapping(mapping: dict, base: Config | None = None) -> Config:
    flat = _flatten(mapping)
    updates = {}
    for key, value in flat.items():
        if key not in CONFIG_KEYS:
            raise InvalidConfig(f"unknown config key {key!r}")
        try:
            updates[CONFIG_KEYS[key]] = _coerce(CONFIG_KEYS[key], value)
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"bad value for {key}: {exc}") from None
    return replace(base or Config(), **updates)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> Config:
    """Read a TOML config; ``overrides`` (dotted keys) take precedence."""
    cfg = Config()
    if path is not None:
        try:
            doc = tomli.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(f"cannot read config {path}: {exc}") from None
        except tomli.TOMLDecodeError as exc:
            raise InvalidConfig(f"{path}: {exc}") from None
        cfg = config_from_mapping(doc, cfg)
        base_dir = Path(path).parent
        for attr in ("spec_file", "signatures"):
            value = getattr(cfg, attr)
            if value and not Path(value).is_absolute():
                cfg = replace(cfg, **{attr: str(base_dir / value)})
    if overrides:
        cfg = config_from_mapping(overrides, cfg)
    return cfg.validate()


# -- manifests --------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    id: str
    source: str
    label: int
    split: str
    group: str = ""


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    base_dir: Path = field(default_factory=Path)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    @property
    def gallery_labels(self) -> np.ndarray:
        return np.unique([e.label for e in self.split("gallery")])


MANIFEST_HEADER = ("id", "path_or_sample", "label", "split")


def read_manifest(path: str | Path) -> Manifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from None
    rows = [r for r in csv.reader(text.splitlines()) if r and any(c.strip() for c in r)]
    if not rows or tuple(c.strip() for c in rows[0][:4]) != MANIFEST_HEADER:
        raise ManifestError(f"{path}: header must be {','.join(MANIFEST_HEADER)}[,group]")
    has_group = len(rows[0]) > 4
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) < 4:
            raise ManifestError(f"{path}:{lineno}: expected at least 4 fields")
        split = row[3].strip().lower()
        if split not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: split must be one of {', '.join(SPLITS)}")
        try:
            label = int(row[2])
        except ValueError:
            raise ManifestError(f"{path}:{lineno}: label {row[2]!r} is not an integer") from None
        if label < 1:
            raise ManifestError(f"{path}:{lineno}: labels start at 1")
        group = row[4].strip() if has_group and len(row) > 4 else ""
        entries.append(ManifestEntry(row[0].strip(), row[1].strip(), label, split, group))
    manifest = Manifest(entries, Path(path).parent)
    known = set(manifest.gallery_labels.tolist())
    for e in entries:
        if e.split != "gallery" and e.label not in known:
            raise ManifestError(f"{path}: {e.id} has label {e.label} which is not in the gallery")
    return manifest


def write_manifest(path: str | Path, entries: Sequence[ManifestEntry]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*MANIFEST_HEADER, "group"])
        for e in entries:
            w.writerow([e.id, e.source, e.label, e.split, e.group])


# -- data loading ------------------------------------------------------------------------

def hierarchy_for(config: Config, image_size: tuple[int, int] | None = None) -> PatchHierarchy:
    if config.hierarchy_mode == "explicit":
        return build_hierarchy(load_spec_file(config.spec_file))
    size = config.image_size or image_size
    if size is None:
        raise InvalidConfig("grid hierarchy needs hierarchy.image_size or an image to infer it from")
    return build_hierarchy(HierarchySpec.grid(config.levels), *size)


@dataclass
class LoadedSplit:
    ids: list[str]
    labels: np.ndarray
    groups: list[str]
    signatures: list[SampleSignature]

    def __len__(self):
        return len(self.ids)


class DataSource:
    """Resolves manifest entries to signatures (images or a signature file)."""

    def __init__(self, manifest: Manifest, config: Config):
        self.manifest = manifest
        self.config = config
        self._sig_index = None
        self._hierarchy = None

    @property
    def hierarchy(self) -> PatchHierarchy:
        if self._hierarchy is None:
            size = None
            if self.config.hierarchy_mode == "grid" and self.config.image_size is None:
                first = next((e for e in self.manifest.entries), None)
                if first is None:
                    raise EmptySplit("manifest is empty")
                size = self._image(first).shape
            self._hierarchy = hierarchy_for(self.config, size)
        return self._hierarchy

    def _image(self, entry: ManifestEntry) -> np.ndarray:
        path = Path(entry.source)
        if not path.is_absolute():
            path = self.manifest.base_dir / path
        return read_pgm(path)

    def _signature(self, entry: ManifestEntry) -> SampleSignature:
        if self.config.feature_source == "gray":
            return extract_gray_signature(self._image(entry), self.hierarchy)
        if self._sig_index is None:
            if not self.config.signatures:
                raise InvalidConfig("features.source = signatures needs features.signatures")
            path = Path(self.config.signatures)
            if not path.is_absolute():
                path = self.manifest.base_dir / path
            self._sig_index = {sid: (lab, sig) for sid, lab, sig in load_signatures(path)}
        if entry.source not in self._sig_index:
            raise ManifestError(f"sample {entry.source!r} not found in the signature file")
        label, sig = self._sig_index[entry.source]
        if label != entry.label:
            raise ManifestError(f"sample {entry.source!r}: manifest label {entry.label} "
                                f"!= signature label {label}")
        return sig

    def load(self, split: str) -> LoadedSplit:
        entries = self.manifest.split(split)
        return LoadedSplit([e.id for e in entries], np.array([e.label for e in entries], dtype=np.int64),
                           [e.group for e in entries], [self._signature(e) for e in entries])


# -- trained state ---------------------------------------------------------------------------

@dataclass
class TrainingSummary:
    truth: np.ndarray
    local: MatchingTable
    global_: MatchingTable

    def local_accuracy(self) -> np.ndarray:
        return self.local.accuracy(self.truth)

    def global_accuracy(self) -> np.ndarray:
        return self.global_.accuracy(self.truth)


@dataclass
class MatcherBundle:
    config: Config
    hierarchy: PatchHierarchy
    pca: dict[PatchId, PcaModel]
    local: dict[PatchId, LocalClassifier]
    global_models: dict[PatchId, GlobalModel]
    gallery_labels: np.ndarray
    final_rule: str = "all_patches"
    training: TrainingSummary | None = None

    @property
    def n_classes(self) -> int:
        return int(self.gallery_labels.shape[0])


def derive_seed(seed: int, p: PatchId) -> int:
    return int(np.random.SeedSequence([int(seed), p.level, p.index]).generate_state(1)[0])


def _check_patch_sets(signatures: Sequence[SampleSignature], h: PatchHierarchy, what: str):
    expected = set(h.patches)
    for k, s in enumerate(signatures):
        if set(s.features) != expected:
            raise HierarchyMismatch(f"{what} sample {k} does not cover the hierarchy's patches")


@dataclass
class LocalStage:
    pca: dict[PatchId, PcaModel]
    local: dict[PatchId, LocalClassifier]
    train_table: MatchingTable


def fit_local_stage(hierarchy: PatchHierarchy, gallery: Sequence[SampleSignature], gallery_labels,
                    train: Sequence[SampleSignature], config: Config) -> LocalStage:
    """PCA per patch and local classifiers (both fitted on the gallery), then the
    local matching table of the train split."""
    gallery_labels = np.asarray(gallery_labels, dtype=np.int64)

    def fit_patch(p):
        g_rows = [k for k, s in enumerate(gallery) if not s.is_occluded(p)]
        if not g_rows:
            raise EmptyGallery(f"every gallery sample is occluded at patch {p}")
        G = np.vstack([gallery[k].features[p] for k in g_rows])
        pca = None
        if config.pca_dim and G.shape[0] >= 2:
            pca = fit_pca(G, config.pca_dim)
            G = pca.apply(G)
        clf = train_local(config.local_kind, G, gallery_labels[g_rows], crc_lambda=config.crc_lambda)
        return pca, clf

    fitted = map_maybe_parallel(fit_patch, hierarchy.patches, config.threads)
    pca = {p: f[0] for p, f in zip(hierarchy.patches, fitted) if f[0] is not None}
    local = {p: f[1] for p, f in zip(hierarchy.patches, fitted)}
    table = local_match_all(local, train, pca, threads=config.threads)
    return LocalStage(pca, local, table)


def fit_global_stage(hierarchy: PatchHierarchy, table: MatchingTable, truth, config: Config
                     ) -> tuple[dict[PatchId, GlobalModel], MatchingTable]:
    truth = np.asarray(truth, dtype=np.int64)

    def fit_patch(p):
        H = build_H(table, hierarchy, p)
        model = train_global(config.global_kind, H, truth, w_lambda=config.w_lambda,
                             n_trees=config.n_trees, max_depth=config.max_depth,
                             seed=derive_seed(config.seed, p))
        return model, model.predict(H)

    fitted = map_maybe_parallel(fit_patch, hierarchy.patches, config.threads)
    models = {p: f[0] for p, f in zip(hierarchy.patches, fitted)}
    q = MatchingTable(table.patches, np.column_stack([f[1][0] for f in fitted]).astype(np.int64),
                      np.column_stack([f[1][1] for f in fitted]).astype(np.float64))
    return models, q


def train_matcher(hierarchy: PatchHierarchy, gallery: Sequence[SampleSignature], gallery_labels,
                  train: Sequence[SampleSignature], train_labels, config: Config,
                  local_stage: LocalStage | None = None) -> MatcherBundle:
    """Train local classifiers, per-patch global models and the final rule.

    ``local_stage`` lets callers reuse an already fitted local stage (the
    global kind does not affect it).
    """
    config.validate()
    if len(gallery) == 0:
        raise EmptySplit("gallery split is empty")
    if len(train) == 0:
        raise EmptySplit("train split is empty; global models need samples not used by the "
                         "local classifiers")
    _check_patch_sets(gallery, hierarchy, "gallery")
    _check_patch_sets(train, hierarchy, "train")
    gallery_labels = np.asarray(gallery_labels, dtype=np.int64)
    train_labels = np.asarray(train_labels, dtype=np.int64)
    if local_stage is None:
        local_stage = fit_local_stage(hierarchy, gallery, gallery_labels, train, config)
    models, q = fit_global_stage(hierarchy, local_stage.train_table, train_labels, config)
    summary = TrainingSummary(train_labels, local_stage.train_table, q)
    return MatcherBundle(config, hierarchy, local_stage.pca, local_stage.local, models,
                         np.unique(gallery_labels), config.final_rule, summary)


def train_from_manifest(manifest: Manifest, config: Config) -> MatcherBundle:
    source = DataSource(manifest, config)
    gallery = source.load("gallery")
    train = source.load("train")
    log.info("training on %d gallery and %d train samples", len(gallery), len(train))
    return train_matcher(source.hierarchy, gallery.signatures, gallery.labels,
                         train.signatures, train.labels, config)


# -- deployment ---------------------------------------------------------------------------------

@dataclass
class Deployment:
    local: MatchingTable
    global_: MatchingTable
    labels: np.ndarray   # final label per probe, 0 when everything abstained
    scores: np.ndarray

    def records(self) -> list[MatchingRecord]:
        return [MatchingRecord(int(l), float(s)) for l, s in zip(self.labels, self.scores)]


def final_vote(labels: np.ndarray, scores: np.ndarray, patches: Sequence[PatchId],
               rule: str = "all_patches") -> tuple[int, float]:
    """Final rule over one probe's global matchings; ``(0, -inf)`` if all abstain."""
    live = labels != ABSTAIN_LABEL
    if not live.any():
        return ABSTAIN_LABEL, float("-inf")
    if rule == "all_patches":
        return tuple(vote_global(labels, scores))
    levels = np.array([p.level for p in patches])
    winners, wscores = [], []
    for lv in np.unique(levels):
        sel = (levels == lv) & live
        if sel.any():
            rec = vote_global(labels[sel], scores[sel])
            winners.append(rec.label)
            wscores.append(rec.score)
    return tuple(vote_global(np.array(winners), np.array(wscores)))


def deploy(bundle: MatcherBundle, probes: Sequence[SampleSignature]) -> Deployment:
    probes = list(probes)
    _check_patch_sets(probes, bundle.hierarchy, "probe")
    h = bundle.hierarchy
    table = local_match_all(bundle.local, probes, bundle.pca, threads=bundle.config.threads)

    def one(p):
        return bundle.global_models[p].predict(build_H(table, h, p))

    cols = map_maybe_parallel(one, h.patches, bundle.config.threads)
    M = len(probes)
    q = MatchingTable(table.patches,
                      np.column_stack([c[0] for c in cols]).astype(np.int64) if cols else np.zeros((M, 0), np.int64),
                      np.column_stack([c[1] for c in cols]).astype(np.float64) if cols else np.zeros((M, 0)))
    labels = np.zeros(M, dtype=np.int64)
    scores = np.full(M, -np.inf)
    for m in range(M):
        labels[m], scores[m] = final_vote(q.labels[m], q.scores[m], q.patches, bundle.final_rule)
    return Deployment(table, q, labels, scores)


def identify(bundle: MatcherBundle, probes: Sequence) -> list[MatchingRecord]:
    """Final identity per probe. Probes may be signatures or grayscale images."""
    sigs = [p if isinstance(p, SampleSignature) else extract_gray_signature(p, bundle.hierarchy)
            for p in probes]
    result = deploy(bundle, sigs)
    dead = np.nonzero(result.labels == ABSTAIN_LABEL)[0]
    if dead.size:
        raise AllAbstain(f"probe(s) {', '.join(map(str, dead.tolist()))}: every patch abstained")
    return result.records()


def flat_vote(table: MatchingTable) -> np.ndarray:
    """Baseline: majority of local matchings over all patches, no hierarchy."""
    out = np.zeros(table.n_samples, dtype=np.int64)
    for m in range(table.n_samples):
        out[m] = final_vote(table.labels[m], table.scores[m], table.patches)[0]
    return out


# -- gallery augmentation -------------------------------------------------------------------------

def augment_gallery(images: Sequence, per_image: int, seed: int, max_rotation: float = 10.0,
                    mask_range: tuple[float, float] = (0.10, 0.25), max_jitter: float = 0.10
                    ) -> list[np.ndarray]:
    """Rotated, block-masked, crop-jittered variants of every gallery image.

    Per variant: rotation uniform in +-``max_rotation`` degrees, a zero-filled
    square mask covering a uniform fraction in ``mask_range`` of the area, and
    a crop trimming up to ``max_jitter`` of each dimension, resized back with
    nearest neighbour. Output order: all variants of image 0, then image 1, ...
    """
    from scipy import ndimage

    from .features import as_image, resize_nearest

    if per_image < 1:
        raise ValueError("per_image must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for image in images:
        img = as_image(image)
        H, W = img.shape
        for _ in range(per_image):
            angle = rng.uniform(-max_rotation, max_rotation) if max_rotation > 0 else 0.0
            frac = rng.uniform(*mask_range) if mask_range[1] > 0 else 0.0
            var = img.astype(np.float64)
            if angle != 0.0:
                var = ndimage.rotate(var, angle, reshape=False, order=1, mode="nearest")
            if frac > 0:
                side = min(int(round(np.sqrt(frac * H * W))), H, W)
                if side > 0:
                    top = int(rng.integers(0, H - side + 1))
                    left = int(rng.integers(0, W - side + 1))
                    var[top:top + side, left:left + side] = 0.0
            if max_jitter > 0:
                dt, db = (int(rng.integers(0, int(max_jitter * H / 2) + 1)) for _ in range(2))
                dl, dr = (int(rng.integers(0, int(max_jitter * W / 2) + 1)) for _ in range(2))
                crop = var[dt:H - db, dl:W - dr]
                var = resize_nearest(crop, H, W)
            out.append(np.clip(np.rint(var), 0, 255).astype(np.uint8))
    return out
