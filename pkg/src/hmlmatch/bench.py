"""Seeded synthetic occlusion benchmark.

Ten identities, each with five structured 32x32 base textures: a shared
smooth mean face plus a fine-grained identity texture, seen under five
lighting patterns. Every split draws fresh Gaussian
noise (sigma = 8 gray levels); train and probe images additionally get a
random block occluder covering 25% of the pixels.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .features import extract_gray_signature, synth_occlusion
from .hierarchy import HierarchySpec, build_hierarchy
from .pipeline import Config, MatcherBundle, fit_local_stage, train_matcher
from .report import EvaluationReport, atomic_write, csv_text, evaluate, fmt

BENCH_SEED = 42
IDENTITY_BLOBS = 80
IDENTITY_WIDTH = (1.0, 2.0)


@dataclass
class BenchData:
    gallery: list[np.ndarray]
    gallery_labels: np.ndarray
    train: list[np.ndarray]
    train_labels: np.ndarray
    probes: list[np.ndarray]
    probe_labels: np.ndarray
    probe_groups: list[str]


def _smooth_field(rng, size: int, n_blobs: int, width: tuple[float, float]) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    field = np.zeros((size, size))
    for _ in range(n_blobs):
        cy, cx = rng.uniform(0, size, 2)
        sy, sx = rng.uniform(*width, 2)
        amp = rng.uniform(-1.0, 1.0)
        field += amp * np.exp(-((yy - cy) ** 2 / (2 * sy ** 2) + (xx - cx) ** 2 / (2 * sx ** 2)))
    return field


def make_occluder(seed: int, size: int = 64) -> np.ndarray:
    """High-contrast stand-in for a natural occluder image."""
    rng = np.random.default_rng(seed)
    coarse = rng.integers(0, 256, (size // 8, size // 8))
    img = np.kron(coarse, np.ones((8, 8)))
    img += rng.normal(0.0, 40.0, (size, size))
    return np.clip(img, 0, 255).astype(np.uint8)


def make_benchmark(seed: int = BENCH_SEED, n_identities: int = 10, n_bases: int = 5,
                   size: int = 32, noise_sigma: float = 8.0, occlusion: float = 0.25,
                   identity_strength: float = 1.0, train_draws: int = 1) -> BenchData:
    rng = np.random.default_rng(seed)
    mean_face = _smooth_field(rng, size, 12, (3.0, 9.0))
    lights = []
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    for k in range(n_bases):
        angle = 2 * np.pi * k / n_bases
        lights.append(0.75 + 0.35 * (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)) * 2)

    bases = []
    for _ in range(n_identities):
        face = mean_face + identity_strength * _smooth_field(rng, size, IDENTITY_BLOBS, IDENTITY_WIDTH)
        face = (face - face.min()) / (face.max() - face.min())
        bases.append([np.clip(40 + 160 * face * light, 0, 255) for light in lights])

    occluder = make_occluder(seed + 1)

    def draw(base, occlude):
        img = np.clip(np.rint(base + rng.normal(0.0, noise_sigma, base.shape)), 0, 255).astype(np.uint8)
        if occlude:
            img = synth_occlusion(img, occluder, occlusion, int(rng.integers(0, 2**31 - 1)))
        return img

    data = {s: ([], []) for s in ("gallery", "train", "probe")}
    groups = []
    for ident, per_light in enumerate(bases, start=1):
        for k, base in enumerate(per_light):
            for split, occl, n in (("gallery", False, 1), ("train", True, train_draws), ("probe", True, 1)):
                for _ in range(n):
                    data[split][0].append(draw(base, occl))
                    data[split][1].append(ident)
            groups.append(f"light{k + 1}")
    return BenchData(data["gallery"][0], np.array(data["gallery"][1]),
                     data["train"][0], np.array(data["train"][1]),
                     data["probe"][0], np.array(data["probe"][1]), groups)


def export_benchmark(data: BenchData, out_dir: str | Path) -> Path:
    """Write every benchmark image as PGM plus a ``manifest.csv``; returns the manifest path."""
    from .features import write_pgm
    from .pipeline import ManifestEntry, write_manifest

    out = Path(out_dir)
    entries = []
    for split, images, labels, groups in (
            ("gallery", data.gallery, data.gallery_labels, None),
            ("train", data.train, data.train_labels, None),
            ("probe", data.probes, data.probe_labels, data.probe_groups)):
        (out / split).mkdir(parents=True, exist_ok=True)
        for k, (img, label) in enumerate(zip(images, labels)):
            sid = f"{split}{k + 1:03d}"
            write_pgm(out / split / f"{sid}.pgm", img)
            entries.append(ManifestEntry(sid, f"{split}/{sid}.pgm", int(label), split,
                                         groups[k] if groups else ""))
    write_manifest(out / "manifest.csv", entries)
    return out / "manifest.csv"


@dataclass
class BenchResult:
    reports: dict[str, EvaluationReport]
    seconds: float
    bundles: dict[str, MatcherBundle] = field(default_factory=dict)
    probes: list = field(default_factory=list)

    @property
    def baseline_accuracy(self) -> float:
        return next(iter(self.reports.values())).baseline_accuracy


METHOD_NAMES = {"vote": "V-HML", "weights": "W-HML", "forest": "R-HML"}


def run_bench(seed: int = BENCH_SEED, kinds=("vote", "weights", "forest"), config: Config | None = None,
              data: BenchData | None = None) -> BenchResult:
    """Train and evaluate one matcher per global kind on the synthetic benchmark.

    The local stage (PCA + CRC on the gallery) is shared by all kinds.
    """
    start = time.perf_counter()
    cfg = replace(config or Config(), seed=seed)
    data = data or make_benchmark(seed)
    h = build_hierarchy(HierarchySpec.grid(cfg.levels), *data.gallery[0].shape)
    gallery = [extract_gray_signature(x, h) for x in data.gallery]
    train = [extract_gray_signature(x, h) for x in data.train]
    probes = [extract_gray_signature(x, h) for x in data.probes]
    stage = fit_local_stage(h, gallery, data.gallery_labels, train, cfg)
    reports, bundles = {}, {}
    for kind in kinds:
        kcfg = replace(cfg, global_kind=kind).validate()
        bundle = train_matcher(h, gallery, data.gallery_labels, train, data.train_labels, kcfg,
                               local_stage=stage)
        reports[kind] = evaluate(bundle, probes, data.probe_labels,
                                 ids=[f"probe{k + 1:03d}" for k in range(len(probes))],
                                 groups=data.probe_groups, label=METHOD_NAMES.get(kind, kind))
        bundles[kind] = bundle
    return BenchResult(reports, time.perf_counter() - start, bundles, probes)


def bench_text(result: BenchResult, seed: int) -> str:
    lines = [f"Synthetic occlusion benchmark (seed {seed})",
             "method        final_acc  mean_local_patch  mean_global_patch",
             f"{'flat-vote':<12}  {fmt(result.baseline_accuracy)}   -                 -"]
    for kind, rep in result.reports.items():
        lines.append(f"{METHOD_NAMES.get(kind, kind):<12}  {fmt(rep.accuracy)}   "
                     f"{fmt(rep.mean_local_patch_accuracy)}          {fmt(rep.mean_global_patch_accuracy)}")
    return "\n".join(lines) + "\n"


def write_bench(result: BenchResult, out_dir: str | Path, seed: int, figures: bool = True) -> list[Path]:
    out = Path(out_dir)
    written = []
    rows = [("method", "final_accuracy", "flat_vote_accuracy", "mean_local_patch_accuracy",
             "mean_global_patch_accuracy")]
    for kind, rep in result.reports.items():
        rows.append((METHOD_NAMES.get(kind, kind), fmt(rep.accuracy), fmt(rep.baseline_accuracy),
                     fmt(rep.mean_local_patch_accuracy), fmt(rep.mean_global_patch_accuracy)))
        written += rep.write(out, prefix=f"{kind}_", figures=figures)
    for name, text in (("bench_summary.csv", csv_text(rows)), ("bench_report.txt", bench_text(result, seed))):
        atomic_write(out / name, text)
        written.append(out / name)
    if figures:
        from .plotting import plot_bench_summary
        plot_bench_summary(result, out / "bench_summary.png")
        written.append(out / "bench_summary.png")
    return written
