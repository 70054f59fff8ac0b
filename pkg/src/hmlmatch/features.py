"""Per-patch signatures: gray values from images, or embeddings read from file.

Also holds the per-patch PCA reduction, synthetic block occlusion and the
binary PGM reader/writer used for image input.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyInput,
    FractionOutOfRange,
    InconsistentPatchSet,
    IoFailure,
    MalformedRecord,
    NonFiniteValue,
)
from .hierarchy import PatchHierarchy, PatchId, PatchRect


@dataclass
class SampleSignature:
    """Feature vector (and occlusion flag) for every patch of one sample."""
    features: dict[PatchId, np.ndarray]
    occluded: dict[PatchId, bool] = field(default_factory=dict)

    @property
    def patches(self) -> tuple[PatchId, ...]:
        return tuple(sorted(self.features))

    def is_occluded(self, p: PatchId) -> bool:
        return bool(self.occluded.get(p, False))

    def __getitem__(self, p: PatchId) -> np.ndarray:
        return self.features[p]


# -- images ---------------------------------------------------------------------

def as_image(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"expected a non-empty 2-D grayscale image, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255):
            raise ValueError("gray levels must lie in 0..255")
        arr = np.rint(arr).astype(np.uint8)
    return arr


def read_pgm(path: str | Path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5) file."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedRecord(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if tokens[0] != b"P5":
        raise MalformedRecord(f"{path}: not a binary PGM (P5) file")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedRecord(f"{path}: bad PGM header") from None
    if maxval > 255 or maxval < 1:
        raise MalformedRecord(f"{path}: only 8-bit PGM is supported (maxval={maxval})")
    pixels = data[pos:pos + width * height]
    if len(pixels) != width * height:
        raise MalformedRecord(f"{path}: expected {width * height} pixels, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path: str | Path, image) -> None:
    img = as_image(image)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def extract_gray_signature(image, h: PatchHierarchy) -> SampleSignature:
    """Gray values of every patch, row-major, scaled to [0, 1]."""
    img = as_image(image)
    if img.shape != h.image_size:
        raise DimensionMismatch(f"image is {img.shape[0]}x{img.shape[1]} but the hierarchy "
                                f"expects {h.image_size[0]}x{h.image_size[1]}")
    scaled = img.astype(np.float64) / 255.0
    feats = {p: h.rects[p].slice(scaled).reshape(-1).copy() for p in h.patches}
    return SampleSignature(feats, {p: False for p in h.patches})


# -- PCA --------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    """Mean and orthonormal basis (columns). ``basis is None`` means identity."""
    mean: np.ndarray | None
    basis: np.ndarray | None
    in_dim: int

    @property
    def identity(self) -> bool:
        return self.basis is None

    @property
    def out_dim(self) -> int:
        return self.in_dim if self.basis is None else self.basis.shape[1]

    def apply(self, v) -> np.ndarray:
        arr = np.asarray(v, dtype=np.float64)
        if arr.shape[-1] != self.in_dim:
            raise DimensionMismatch(f"PCA expects dim {self.in_dim}, got {arr.shape[-1]}")
        if self.basis is None:
            return arr.copy()
        return (arr - self.mean) @ self.basis


def fit_pca(vectors, target_dim: int) -> PcaModel:
    """Fit a PCA projection to at most ``target_dim`` components.

    Output size is ``min(target_dim, input_dim, n - 1)``. Inputs that already
    have ``input_dim <= target_dim`` get the identity model, which keeps the
    original features untouched. Components come from the SVD of the centred
    data, i.e. the covariance eigenvectors in descending eigenvalue order, with
    each column's largest-magnitude entry made positive.
    """
    X = _stack(vectors)
    n, d = X.shape
    if n < 2:
        raise EmptyInput(f"PCA needs at least 2 vectors, got {n}")
    if target_dim < 1:
        raise ValueError("target_dim must be >= 1")
    if d <= target_dim:
        return PcaModel(None, None, d)
    k = min(target_dim, d, n - 1)
    mean = X.mean(axis=0)
    _, _, vt = np.linalg.svd(X - mean, full_matrices=False)
    basis = vt[:k].T.copy()
    pivot = np.argmax(np.abs(basis), axis=0)
    signs = np.sign(basis[pivot, np.arange(k)])
    signs[signs == 0] = 1.0
    basis *= signs
    return PcaModel(mean, basis, d)


def apply_pca(model: PcaModel, v) -> np.ndarray:
    return model.apply(v)


def _stack(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        X = np.asarray(vectors, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionMismatch("expected a 2-D array of row vectors")
        return X
    rows = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
    if not rows:
        raise EmptyInput("no vectors given")
    dims = {r.shape[0] for r in rows}
    if len(dims) != 1:
        raise DimensionMismatch(f"vectors have differing dimensions {sorted(dims)}")
    return np.vstack(rows)


# -- occlusion ---------------------------------------------------------------------

def occlusion_box(shape: tuple[int, int], fraction: float, seed: int) -> PatchRect:
    """Square block covering about ``fraction`` of the image, placed uniformly."""
    if not 0.0 < fraction < 1.0:
        raise FractionOutOfRange(f"fraction must lie in (0, 1), got {fraction}")
    height, width = shape
    side = math.isqrt(int(math.floor(fraction * height * width)))
    side = min(side, height, width)
    if side < 1:
        raise FractionOutOfRange(f"fraction {fraction} of a {height}x{width} image is "
                                 "less than one pixel")
    rng = np.random.default_rng(seed)
    top = int(rng.integers(0, height - side + 1))
    left = int(rng.integers(0, width - side + 1))
    return PatchRect(top, left, side, side)


def resize_nearest(image, height: int, width: int) -> np.ndarray:
    src = np.asarray(image)
    rows = (np.arange(height) * src.shape[0]) // height
    cols = (np.arange(width) * src.shape[1]) // width
    return src[rows[:, None], cols[None, :]]


def synth_occlusion(image, occluder, fraction: float, seed: int) -> np.ndarray:
    """Paste ``occluder`` (nearest-neighbour resized) over a random square block."""
    img = as_image(image)
    box = occlusion_box(img.shape, fraction, seed)
    out = img.copy()
    out[box.top:box.bottom, box.left:box.right] = resize_nearest(as_image(occluder), box.height, box.width)
    return out


# -- signature files ----------------------------------------------------------------
# One row per (sample, patch):  sample_id,label,level,index,occluded,v1,...,vB

SIGNATURE_HEADER = ("sample_id", "label", "level", "index", "occluded")


def load_signatures(path: str | Path) -> list[tuple[str, int, SampleSignature]]:
    """Read a signature file; samples are returned in order of first appearance."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    rows = list(csv.reader(text.splitlines()))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        return []
    header = [c.strip() for c in rows[0]]
    if tuple(header[:5]) != SIGNATURE_HEADER:
        raise MalformedRecord(f"{path}: header must start with {','.join(SIGNATURE_HEADER)}")

    samples: dict[str, tuple[int, dict, dict]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) < 6:
            raise MalformedRecord(f"{path}:{lineno}: expected at least 6 fields, got {len(row)}")
        sid = row[0].strip()
        try:
            label = int(row[1])
            pid = PatchId(int(row[2]), int(row[3]))
            occ = row[4].strip()
            if occ not in ("0", "1"):
                raise ValueError(f"occluded flag must be 0 or 1, got {occ!r}")
            values = np.array([float(x) for x in row[5:]], dtype=np.float64)
        except (ValueError, TypeError) as exc:
            raise MalformedRecord(f"{path}:{lineno}: {exc}") from None
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue(f"{path}:{lineno}: non-finite feature value")
        if sid not in samples:
            samples[sid] = (label, {}, {})
        known_label, feats, flags = samples[sid]
        if known_label != label:
            raise MalformedRecord(f"{path}:{lineno}: sample {sid} has conflicting labels")
        if pid in feats:
            raise MalformedRecord(f"{path}:{lineno}: duplicate row for {sid} {pid}")
        feats[pid] = values
        flags[pid] = occ == "1"

    out = []
    reference = None
    for sid, (label, feats, flags) in samples.items():
        patch_set = frozenset(feats)
        if reference is None:
            reference = (sid, patch_set, {p: v.shape[0] for p, v in feats.items()})
        elif patch_set != reference[1]:
            missing = sorted(reference[1] ^ patch_set)
            raise InconsistentPatchSet(f"{path}: sample {sid} differs from {reference[0]} "
                                       f"in patches {', '.join(map(str, missing))}")
        for p, v in feats.items():
            if v.shape[0] != reference[2][p]:
                raise InconsistentPatchSet(f"{path}: sample {sid} patch {p} has dim "
                                           f"{v.shape[0]}, expected {reference[2][p]}")
        out.append((sid, label, SampleSignature(feats, flags)))
    return out


def write_signatures(path: str | Path, records: Iterable[tuple[str, int, SampleSignature]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        records = list(records)
        width = max((len(v) for _, _, s in records for v in s.features.values()), default=0)
        writer.writerow([*SIGNATURE_HEADER, *(f"v{k + 1}" for k in range(width))])
        for sid, label, sig in records:
            for p in sig.patches:
                writer.writerow([sid, label, p.level, p.index, int(sig.is_occluded(p)),
                                 *(repr(float(x)) for x in sig.features[p])])


def check_signature(sig: SampleSignature, h: PatchHierarchy) -> None:
    if set(sig.features) != set(h.patches):
        raise InconsistentPatchSet("signature patches do not match the hierarchy")
