"""Command-line front end: ``hmlmatch <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import HMLError, InvalidConfig

EXIT_CODES = """\
exit status:
  0  success
  1  unexpected internal error
  2  usage error (bad flags or arguments)
  3  input/output failure (missing or unreadable file)
  4  hierarchy error (grid does not nest, image not divisible, bad spec)
  5  data error (malformed records, dimension mismatch, non-finite values)
  6  model error (empty gallery, singular system, every patch abstained)
  7  pipeline error (bad config, manifest or split; gallery changed)
  8  bundle error (unknown format version, corrupt file)
  9  statistics error (bad score table, unsupported alpha or k)
"""

log = logging.getLogger("hmlmatch")


def _overrides(pairs: list[str] | None) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise InvalidConfig(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args):
    from .pipeline import load_config
    overrides = _overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = str(args.threads)
    return load_config(getattr(args, "config", None), overrides)


# -- subcommands -------------------------------------------------------------------------

def cmd_partition(args) -> int:
    from .hierarchy import HierarchySpec, build_hierarchy, load_spec_file, parse_levels, parse_size
    if args.spec:
        h = build_hierarchy(load_spec_file(args.spec))
    else:
        h = build_hierarchy(HierarchySpec.grid(parse_levels(args.levels)), *parse_size(args.image_size))
    text = h.describe()
    if args.out:
        from .report import atomic_write
        atomic_write(args.out, text)
    if args.write_spec:
        from .hierarchy import save_spec_file
        save_spec_file(h.to_explicit_spec(), args.write_spec)
    print(text if args.full else "\n".join(text.splitlines()[:4]))
    return 0


def cmd_train(args) -> int:
    from .bundle import save_bundle
    from .pipeline import read_manifest, train_from_manifest
    config = _config(args)
    bundle = train_from_manifest(read_manifest(args.manifest), config)
    save_bundle(bundle, args.out)
    tr = bundle.training
    print(f"trained {len(bundle.hierarchy)} patches, {bundle.n_classes} identities, "
          f"global kind {config.global_kind}")
    print(f"train split: mean local patch accuracy {tr.local_accuracy().mean():.6f}, "
          f"mean global patch accuracy {tr.global_accuracy().mean():.6f}")
    print(f"bundle written to {args.out}")
    return 0


def _probe_split(args, bundle):
    from .bundle import check_gallery
    from .pipeline import DataSource, read_manifest
    manifest = read_manifest(args.manifest)
    check_gallery(bundle, [e.label for e in manifest.split("gallery")] or bundle.gallery_labels)
    source = DataSource(manifest, replace(bundle.config, threads=args.threads or bundle.config.threads))
    source._hierarchy = bundle.hierarchy
    return source.load(args.split)


def cmd_identify(args) -> int:
    from .bundle import load_bundle
    from .errors import AllAbstain, EmptyProbeSet
    from .pipeline import deploy
    from .report import atomic_write, csv_text
    bundle = load_bundle(args.bundle)
    if args.threads:
        bundle.config = replace(bundle.config, threads=args.threads)
    probes = _probe_split(args, bundle)
    if not len(probes):
        raise EmptyProbeSet(f"no {args.split} samples in {args.manifest}")
    result = deploy(bundle, probes.signatures)
    patches = result.global_.patches
    rows = [["sample", "predicted_label", "score", *[f"q_{p.level}_{p.index}" for p in patches]]]
    for m, sid in enumerate(probes.ids):
        s = result.scores[m]
        rows.append([sid, int(result.labels[m]), f"{s:.6f}" if np.isfinite(s) else "-inf",
                     *map(int, result.global_.labels[m])])
    atomic_write(args.out, csv_text(rows))
    n_dead = int(np.sum(result.labels == 0))
    print(f"identified {len(probes)} probes -> {args.out}")
    if n_dead:
        raise AllAbstain(f"{n_dead} probe(s) had every patch abstain (label 0 in {args.out})")
    return 0


def cmd_evaluate(args) -> int:
    from .bundle import load_bundle
    from .report import evaluate
    bundle = load_bundle(args.bundle)
    if args.threads:
        bundle.config = replace(bundle.config, threads=args.threads)
    probes = _probe_split(args, bundle)
    report = evaluate(bundle, probes.signatures, probes.labels, probes.ids, probes.groups,
                      label=Path(args.bundle).stem)
    report.write(args.out, figures=not args.no_figures)
    print(report.to_text(), end="")
    return 0


def cmd_bench(args) -> int:
    from .bench import make_benchmark, run_bench, bench_text, write_bench, export_benchmark
    config = _config(args)
    if args.export:
        path = export_benchmark(make_benchmark(args.seed), args.export)
        print(f"benchmark images and manifest written to {path}")
        return 0
    kinds = tuple(args.kinds.split(",")) if args.kinds else ("vote", "weights", "forest")
    result = run_bench(args.seed, kinds, config)
    print(bench_text(result, args.seed), end="")
    if args.out:
        write_bench(result, args.out, args.seed, figures=not args.no_figures)
        print(f"reports written to {args.out}")
    log.info("bench finished in %.1f s", result.seconds)
    return 0


def cmd_stats(args) -> int:
    from .stats import compare_methods, pairwise_csv, ranks_csv, read_score_table, result_text
    res = compare_methods(read_score_table(args.scores), args.alpha)
    text = result_text(res)
    print(text, end="")
    if args.out:
        from .report import atomic_write
        out = Path(args.out)
        atomic_write(out / "stats_report.txt", text)
        atomic_write(out / "ranks.csv", ranks_csv(res))
        atomic_write(out / "pairwise.csv", pairwise_csv(res))
        if not args.no_figures:
            from .plotting import plot_cd_diagram
            plot_cd_diagram(res, out / "cd_diagram.png")
    return 0


# -- parser ------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(
        prog="hmlmatch", formatter_class=fmt, epilog=EXIT_CODES,
        description="Hierarchical multi-label patch matching for occluded face identification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt,
                           epilog=EXIT_CODES)
        return p

    def common(p, seed_default=None):
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key, e.g. --set global.kind=forest (repeatable)")
        p.add_argument("--seed", type=int, default=seed_default, help="random seed (overrides config)")
        p.add_argument("--threads", type=int, help="worker threads (default: config, 1)")

    p = add("partition", "Build a patch hierarchy and print its description.")
    p.add_argument("--levels", default="1x1,1x2,2x2,4x4,8x8", help="grid levels, coarse to fine")
    p.add_argument("--image-size", default="32x32", help="HEIGHTxWIDTH")
    p.add_argument("--spec", help="explicit hierarchy TOML (overrides --levels/--image-size)")
    p.add_argument("--out", help="write the full description here")
    p.add_argument("--write-spec", help="write the hierarchy as an explicit TOML spec")
    p.add_argument("--full", action="store_true", help="print every patch and its relations")
    p.set_defaults(func=cmd_partition)

    p = add("train", "Train a matcher from a manifest's gallery and train splits.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="bundle file to write")
    common(p)
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (
            ("identify", cmd_identify, "Identify probes; writes a per-probe CSV."),
            ("evaluate", cmd_evaluate, "Evaluate a bundle on labelled probes; writes report files.")):
        p = add(name, help_text)
        p.add_argument("--bundle", required=True)
        p.add_argument("--manifest", required=True)
        p.add_argument("--split", default="probe", choices=("gallery", "train", "probe"))
        p.add_argument("--out", required=True,
                       help="CSV file" if name == "identify" else "output directory")
        p.add_argument("--threads", type=int)
        if name == "evaluate":
            p.add_argument("--no-figures", action="store_true")
        p.set_defaults(func=func)

    p = add("bench", "Run the seeded synthetic occlusion benchmark.")
    common(p, seed_default=42)
    p.add_argument("--kinds", help="comma-separated global kinds (default vote,weights,forest)")
    p.add_argument("--out", help="directory for reports and figures")
    p.add_argument("--no-figures", action="store_true")
    p.add_argument("--export", metavar="DIR", help="only write the benchmark as PGM images + manifest")
    p.set_defaults(func=cmd_bench)

    p = add("stats", "Friedman and Bonferroni-Dunn comparison of methods over datasets.")
    p.add_argument("--scores", required=True, help="CSV: header 'dataset,method...', one row per dataset")
    p.add_argument("--alpha", type=float, default=0.10)
    p.add_argument("--out", help="directory for report, rank and pairwise CSVs, CD diagram")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except HMLError as exc:
        print(f"hmlmatch {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
