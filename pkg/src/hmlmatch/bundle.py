"""Bundle files: a text header, then a JSON block and raw ``.npy`` arrays.

Layout::

    HMLBUNDLE <version> <sha256 of payload> <payload length>\n
    <payload>

where the payload is an 8-byte big-endian JSON length, the JSON metadata, and
every array listed in ``meta["arrays"]`` written back to back in ``.npy``
format. Arrays round-trip bit-exactly and the bytes are deterministic.
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CorruptBundle, GalleryChanged, IoFailure, VersionMismatch
from .features import PcaModel
from .forest import ForestModel, Tree
from .global_matchers import GlobalModel
from .hierarchy import HierarchySpec, PatchId, build_hierarchy, spec_from_dict, spec_to_dict
from .local import LocalClassifier, MatchingTable
from .pipeline import Config, MatcherBundle, TrainingSummary, config_from_mapping

MAGIC = "HMLBUNDLE"
VERSION = 1


def _key(p: PatchId) -> str:
    return f"{p.level}_{p.index}"


def _pid(key: str) -> PatchId:
    level, index = key.split("_")
    return PatchId(int(level), int(index))


def dumps_bundle(bundle: MatcherBundle) -> bytes:
    arrays: dict[str, np.ndarray] = {}
    h = bundle.hierarchy
    meta: dict = {
        "config": bundle.config.to_dict(),
        "hierarchy": {"spec": spec_to_dict(h.spec), "image_size": list(h.image_size)},
        "final_rule": bundle.final_rule,
        "n_classes": bundle.n_classes,
        "pca": {}, "local": {}, "global": {},
    }
    arrays["gallery_labels"] = bundle.gallery_labels
    for p, model in bundle.pca.items():
        k = _key(p)
        meta["pca"][k] = {"in_dim": model.in_dim, "identity": model.identity}
        if not model.identity:
            arrays[f"pca/{k}/mean"] = model.mean
            arrays[f"pca/{k}/basis"] = model.basis
    for p, clf in bundle.local.items():
        k = _key(p)
        meta["local"][k] = {"kind": clf.kind, "crc_lambda": clf.crc_lambda}
        arrays[f"local/{k}/gallery"] = clf.gallery
        arrays[f"local/{k}/labels"] = clf.labels
        if clf.projection is not None:
            arrays[f"local/{k}/projection"] = clf.projection
    for p, g in bundle.global_models.items():
        k = _key(p)
        entry = {"kind": g.kind}
        if g.weights is not None:
            arrays[f"global/{k}/weights"] = g.weights
        if g.forest is not None:
            f = g.forest
            entry.update(n_columns=f.n_columns, max_depth=f.max_depth, seed=f.seed,
                         depths=[t.depth for t in f.trees],
                         sizes=[int(t.feature.shape[0]) for t in f.trees])
            arrays[f"global/{k}/classes"] = f.classes
            for part in ("feature", "value", "left", "right", "label"):
                arrays[f"global/{k}/{part}"] = np.concatenate([getattr(t, part) for t in f.trees])
        meta["global"][k] = entry
    if bundle.training is not None:
        tr = bundle.training
        meta["training"] = {"patches": [_key(p) for p in tr.local.patches]}
        arrays["training/truth"] = tr.truth
        arrays["training/local_labels"] = tr.local.labels
        arrays["training/local_scores"] = tr.local.scores
        arrays["training/global_labels"] = tr.global_.labels
        arrays["training/global_scores"] = tr.global_.scores

    meta["arrays"] = list(arrays)
    blob = io.BytesIO()
    head = json.dumps(meta, sort_keys=True).encode("utf-8")
    blob.write(struct.pack(">Q", len(head)))
    blob.write(head)
    for name in meta["arrays"]:
        np.lib.format.write_array(blob, np.ascontiguousarray(arrays[name]), allow_pickle=False)
    payload = blob.getvalue()
    digest = hashlib.sha256(payload).hexdigest()
    return f"{MAGIC} {VERSION} {digest} {len(payload)}\n".encode("ascii") + payload


def loads_bundle(data: bytes) -> MatcherBundle:
    nl = data.find(b"\n")
    if nl < 0:
        raise CorruptBundle("missing bundle header")
    try:
        magic, version, digest, length = data[:nl].decode("ascii").split(" ")
        version, length = int(version), int(length)
    except (UnicodeDecodeError, ValueError):
        raise CorruptBundle("unreadable bundle header") from None
    if magic != MAGIC:
        raise CorruptBundle("not a matcher bundle")
    if version != VERSION:
        raise VersionMismatch(f"bundle format version {version}; this build reads version {VERSION}")
    payload = data[nl + 1:]
    if len(payload) != length or hashlib.sha256(payload).hexdigest() != digest:
        raise CorruptBundle("bundle checksum mismatch (truncated or modified file)")
    try:
        return _decode(payload)
    except (KeyError, ValueError, TypeError, struct.error) as exc:
        raise CorruptBundle(f"bundle contents are inconsistent: {exc}") from None


def _decode(payload: bytes) -> MatcherBundle:
    (n,) = struct.unpack(">Q", payload[:8])
    meta = json.loads(payload[8:8 + n].decode("utf-8"))
    buf = io.BytesIO(payload[8 + n:])
    arrays = {name: np.lib.format.read_array(buf, allow_pickle=False) for name in meta["arrays"]}

    config = config_from_mapping(meta["config"])
    spec = spec_from_dict(meta["hierarchy"]["spec"])
    h = build_hierarchy(spec, *meta["hierarchy"]["image_size"])

    pca = {}
    for k, entry in meta["pca"].items():
        if entry["identity"]:
            pca[_pid(k)] = PcaModel(None, None, entry["in_dim"])
        else:
            pca[_pid(k)] = PcaModel(arrays[f"pca/{k}/mean"], arrays[f"pca/{k}/basis"], entry["in_dim"])
    local = {}
    for k, entry in meta["local"].items():
        local[_pid(k)] = LocalClassifier(entry["kind"], arrays[f"local/{k}/gallery"],
                                         arrays[f"local/{k}/labels"], entry["crc_lambda"],
                                         arrays.get(f"local/{k}/projection"))
    models = {}
    for k, entry in meta["global"].items():
        p = _pid(k)
        forest = None
        if entry["kind"] == "forest":
            trees, start = [], 0
            parts = {part: arrays[f"global/{k}/{part}"] for part in ("feature", "value", "left", "right", "label")}
            for size, depth in zip(entry["sizes"], entry["depths"]):
                trees.append(Tree(*(parts[q][start:start + size] for q in ("feature", "value", "left", "right", "label")),
                                  depth))
                start += size
            forest = ForestModel(trees, entry["n_columns"], arrays[f"global/{k}/classes"],
                                 entry["max_depth"], entry["seed"])
        models[p] = GlobalModel(entry["kind"], p, arrays.get(f"global/{k}/weights"), forest)

    training = None
    if "training" in meta:
        patches = tuple(_pid(k) for k in meta["training"]["patches"])
        training = TrainingSummary(
            arrays["training/truth"],
            MatchingTable(patches, arrays["training/local_labels"], arrays["training/local_scores"]),
            MatchingTable(patches, arrays["training/global_labels"], arrays["training/global_scores"]))
    return MatcherBundle(config, h, pca, local, models, arrays["gallery_labels"],
                         meta["final_rule"], training)


def save_bundle(bundle: MatcherBundle, path: str | Path) -> None:
    from .report import atomic_write
    try:
        atomic_write(path, dumps_bundle(bundle))
    except OSError as exc:
        raise IoFailure(f"cannot write bundle {path}: {exc}") from None


def load_bundle(path: str | Path, gallery_labels=None) -> MatcherBundle:
    """Load a bundle; if ``gallery_labels`` is given it must match the trained gallery."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read bundle {path}: {exc}") from None
    bundle = loads_bundle(data)
    if gallery_labels is not None:
        check_gallery(bundle, gallery_labels)
    return bundle


def check_gallery(bundle: MatcherBundle, gallery_labels) -> None:
    current = np.unique(np.asarray(gallery_labels, dtype=np.int64))
    if not np.array_equal(current, bundle.gallery_labels):
        added = sorted(set(current.tolist()) - set(bundle.gallery_labels.tolist()))
        removed = sorted(set(bundle.gallery_labels.tolist()) - set(current.tolist()))
        raise GalleryChanged(f"gallery identities changed since training (added {added}, "
                             f"removed {removed}); retrain the matcher")
