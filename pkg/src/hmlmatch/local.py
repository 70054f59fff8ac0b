"""Per-patch local classifiers: nearest neighbour, CRC and cosine similarity.

Every classifier returns a label and a similarity score (higher is better).
Occluded patches abstain with label 0 and score ``-inf``; label 0 is never a
gallery identity.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyGallery, MissingClassifier, SingularSystem
from .hierarchy import PatchId

ABSTAIN_LABEL = 0
KINDS = ("nn", "crc", "cosine")
_EPS = 1e-12


class MatchingRecord(NamedTuple):
    label: int
    score: float

    @property
    def abstain(self) -> bool:
        return self.label == ABSTAIN_LABEL


ABSTAIN = MatchingRecord(ABSTAIN_LABEL, float("-inf"))


@dataclass(frozen=True)
class LocalClassifier:
    """Trained state of one patch classifier.

    ``gallery`` holds exemplars as columns (``dim x n``); for CRC and cosine
    the columns are l2-normalised. ``projection`` is the CRC coding matrix
    ``(A^T A + lambda I)^-1 A^T``.
    """
    kind: str
    gallery: np.ndarray
    labels: np.ndarray
    crc_lambda: float = 0.0
    projection: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return self.gallery.shape[0]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def predict(self, probe) -> MatchingRecord:
        return predict_local(self, probe)

    def predict_many(self, probes) -> tuple[np.ndarray, np.ndarray]:
        return predict_batch(self, probes)


def _normalize_columns(A: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(A, axis=0)
    return A / np.where(norms > _EPS, norms, 1.0)


def train_local(kind: str, features, labels=None, crc_lambda: float = 0.001) -> LocalClassifier:
    """Fit a local classifier on gallery features.

    ``features`` is either an ``(n, dim)`` array with ``labels`` given
    separately, or a list of ``(vector, label)`` pairs.
    """
    kind = kind.lower()
    if kind not in KINDS:
        raise ValueError(f"unknown local classifier {kind!r}; choose from {', '.join(KINDS)}")
    if labels is None:
        pairs = list(features)
        if not pairs:
            raise EmptyGallery("gallery is empty")
        dims = {np.asarray(v).reshape(-1).shape[0] for v, _ in pairs}
        if len(dims) != 1:
            raise DimensionMismatch(f"gallery vectors have differing dims {sorted(dims)}")
        X = np.vstack([np.asarray(v, dtype=np.float64).reshape(-1) for v, _ in pairs])
        y = np.array([int(lab) for _, lab in pairs], dtype=np.int64)
    else:
        X = np.atleast_2d(np.asarray(features, dtype=np.float64))
        y = np.asarray(labels, dtype=np.int64).reshape(-1)
        if X.shape[0] == 0:
            raise EmptyGallery("gallery is empty")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} gallery vectors but {y.shape[0]} labels")
    if np.any(y < 1):
        raise ValueError("gallery labels must be positive integers")

    A = X.T.copy()
    if kind == "nn":
        return LocalClassifier("nn", A, y)
    A = _normalize_columns(A)
    if kind == "cosine":
        return LocalClassifier("cosine", A, y)

    if crc_lambda < 0:
        raise ValueError("crc_lambda must be >= 0")
    n = A.shape[1]
    gram = A.T @ A + crc_lambda * np.eye(n)
    if crc_lambda == 0 and np.linalg.matrix_rank(gram) < n:
        raise SingularSystem("CRC with lambda=0 on a rank-deficient gallery")
    try:
        projection = np.linalg.solve(gram, A.T)
    except np.linalg.LinAlgError:
        raise SingularSystem("CRC normal equations are singular") from None
    return LocalClassifier("crc", A, y, float(crc_lambda), projection)


def _best_per_class(clf: LocalClassifier, scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """scores: (n_gallery, K) -> per-probe best label/score, ties to smallest label."""
    classes = clf.classes
    per_class = np.full((classes.shape[0], scores.shape[1]), -np.inf)
    for k, c in enumerate(classes):
        per_class[k] = scores[clf.labels == c].max(axis=0)
    pick = np.argmax(per_class, axis=0)  # first maximum -> smallest label
    return classes[pick], per_class[pick, np.arange(scores.shape[1])]


def predict_batch(clf: LocalClassifier, probes) -> tuple[np.ndarray, np.ndarray]:
    """Predict for ``(K, dim)`` probes; returns ``(labels, scores)``."""
    Y = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    if Y.shape[1] != clf.dim:
        raise DimensionMismatch(f"probe dim {Y.shape[1]} != classifier dim {clf.dim}")
    Y = Y.T  # dim x K
    if clf.kind == "nn":
        # direct differences, not the expanded quadratic: identical vectors give exactly 0
        dist = np.empty((clf.gallery.shape[1], Y.shape[1]))
        step = max(1, 2_000_000 // max(clf.gallery.size, 1))
        for s in range(0, Y.shape[1], step):
            blk = Y[:, s:s + step]
            dist[:, s:s + step] = np.linalg.norm(clf.gallery[:, :, None] - blk[:, None, :], axis=0)
        return _best_per_class(clf, -dist)
    norms = np.linalg.norm(Y, axis=0)
    Yn = Y / np.where(norms > _EPS, norms, 1.0)
    if clf.kind == "cosine":
        return _best_per_class(clf, clf.gallery.T @ Yn)

    # CRC-RLS: code with the whole gallery, decide by regularised class residual
    alpha = clf.projection @ Yn  # n x K
    classes = clf.classes
    resid = np.empty((classes.shape[0], Yn.shape[1]))
    for k, c in enumerate(classes):
        mask = clf.labels == c
        recon = clf.gallery[:, mask] @ alpha[mask]
        num = np.linalg.norm(Yn - recon, axis=0)
        den = np.linalg.norm(alpha[mask], axis=0)
        resid[k] = num / np.maximum(den, _EPS)
    pick = np.argmin(resid, axis=0)
    return classes[pick], -resid[pick, np.arange(Yn.shape[1])]


def predict_local(clf: LocalClassifier, probe) -> MatchingRecord:
    v = np.asarray(probe, dtype=np.float64).reshape(-1)
    labels, scores = predict_batch(clf, v[None, :])
    return MatchingRecord(int(labels[0]), float(scores[0]))


def crc_residuals(clf: LocalClassifier, probe) -> dict[int, float]:
    """Per-class regularised residuals of a CRC classifier (diagnostics)."""
    if clf.kind != "crc":
        raise ValueError("residuals are only defined for CRC classifiers")
    y = np.asarray(probe, dtype=np.float64).reshape(-1)
    n = np.linalg.norm(y)
    y = y / n if n > _EPS else y
    alpha = clf.projection @ y
    out = {}
    for c in clf.classes:
        mask = clf.labels == c
        out[int(c)] = float(np.linalg.norm(y - clf.gallery[:, mask] @ alpha[mask])
                            / max(np.linalg.norm(alpha[mask]), _EPS))
    return out


@dataclass
class MatchingTable:
    """Matching labels/scores for M samples x N patches (columns in ``patches`` order)."""
    patches: tuple[PatchId, ...]
    labels: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self._pos = {p: k for k, p in enumerate(self.patches)}

    @property
    def n_samples(self) -> int:
        return self.labels.shape[0]

    def column(self, p: PatchId) -> int:
        return self._pos[p]

    def __contains__(self, p) -> bool:
        return p in self._pos

    def record(self, m: int, p: PatchId) -> MatchingRecord:
        k = self._pos[p]
        return MatchingRecord(int(self.labels[m, k]), float(self.scores[m, k]))

    def accuracy(self, truth) -> np.ndarray:
        """Per-patch accuracy; abstentions count as wrong."""
        truth = np.asarray(truth).reshape(-1, 1)
        if self.n_samples == 0:
            return np.zeros(len(self.patches))
        return (self.labels == truth).mean(axis=0)


def map_maybe_parallel(fn, items, threads: int = 1):
    items = list(items)
    if threads and threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def local_match_all(classifiers: dict[PatchId, LocalClassifier], signatures: Sequence,
                    transforms: dict | None = None, threads: int = 1) -> MatchingTable:
    """Local matching of every patch of every sample.

    ``transforms`` optionally maps a patch to a fitted PCA model applied to
    the features before classification.
    """
    signatures = list(signatures)
    patches = tuple(sorted(classifiers)) if not signatures else signatures[0].patches
    for p in patches:
        if p not in classifiers:
            raise MissingClassifier(f"no local classifier for patch {p}")
    M, N = len(signatures), len(patches)

    def one(p):
        lab = np.full(M, ABSTAIN_LABEL, dtype=np.int64)
        sco = np.full(M, -np.inf)
        live = [m for m, s in enumerate(signatures) if not s.is_occluded(p)]
        if live:
            X = np.vstack([signatures[m].features[p] for m in live])
            if transforms and p in transforms:
                X = transforms[p].apply(X)
            lab_live, sco_live = predict_batch(classifiers[p], X)
            lab[live] = lab_live
            sco[live] = sco_live
        return lab, sco

    cols = map_maybe_parallel(one, patches, threads)
    labels = np.zeros((M, N), dtype=np.int64)
    scores = np.zeros((M, N))
    for k, (lab, sco) in enumerate(cols):
        labels[:, k] = lab
        scores[:, k] = sco
    return MatchingTable(patches, labels, scores)
