"""Acceptance suite: one test per criterion, each logging a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or ``python tests/test_acceptance.py``.
The per-criterion lines are repeated in the "acceptance criteria" section of the terminal summary.
"""
import time
import warnings

import numpy as np
import pytest

from hmlmatch.bench import BENCH_SEED, run_bench, write_bench
from hmlmatch.bundle import load_bundle, save_bundle
from hmlmatch.forest import train_forest
from hmlmatch.global_matchers import ensemble_loss, solve_weights, weight_objective
from hmlmatch.hierarchy import FIVE_LEVEL_GRID, HierarchySpec, build_hierarchy
from hmlmatch.pipeline import identify
from hmlmatch.stats import compare_methods, read_score_table

import oracles
from test_hierarchy import _check_axioms


def test_criterion_1_five_method_statistics(data_dir, acceptance_log):
    start = time.perf_counter()
    res = compare_methods(read_score_table(data_dir / "five_methods.csv"), alpha=0.10)
    elapsed = time.perf_counter() - start

    avg = [float(r) for r in res.ranks.average]
    ranks_ok = avg == [5, 3.5, 2, 1, 3.5]
    pairs = {(a, b) for a, b, _ in res.better_pairs()}
    wanted = {("W-HML", "MLS"), ("W-HML", "MPCRC"), ("W-HML", "R-HML"), ("V-HML", "MLS")}
    ok = (ranks_ok and abs(res.chi2_F - 30.4) <= 1e-9 and abs(res.F_F - 133.0) <= 0.5
          and abs(res.CD - 1.77) <= 0.01 and wanted <= pairs and elapsed < 1.0)
    acceptance_log(1, ok, f"ranks={avg} chi2={res.chi2_F:.10f} F_F={res.F_F:.4f} "
                          f"CD={res.CD:.4f} pairs={sorted(pairs)} t={elapsed:.3f}s")
    assert ok


def test_criterion_2_two_method_statistics(data_dir, acceptance_log):
    start = time.perf_counter()
    res = compare_methods(read_score_table(data_dir / "two_methods.csv"), alpha=0.10)
    elapsed = time.perf_counter() - start

    ranks_ok = np.allclose(res.ranks.average, [5 / 3, 4 / 3])
    flagged = [(a, b) for a, b, _ in res.better_pairs()] == [("HML", "UR2D")]
    ok = (ranks_ok and 3.60 <= res.F_F <= 3.80 and abs(res.CD - 0.30) <= 0.01
          and flagged and elapsed < 1.0)
    acceptance_log(2, ok, f"ranks={np.round(res.ranks.average, 4).tolist()} F_F={res.F_F:.4f} "
                          f"CD={res.CD:.4f} HML>UR2D={flagged} t={elapsed:.3f}s")
    assert ok


def test_criterion_3_hierarchy(acceptance_log):
    start = time.perf_counter()
    h = build_hierarchy(HierarchySpec.grid(FIVE_LEVEL_GRID), 32, 32)
    counts_ok = len(h) == 87 and h.level_sizes == (1, 2, 4, 16, 64)
    rng = np.random.default_rng(2024)
    failures = 0
    for _ in range(100):
        try:
            _check_axioms(oracles.random_hierarchy(rng))
        except AssertionError:
            failures += 1
    elapsed = time.perf_counter() - start
    ok = counts_ok and failures == 0 and elapsed < 5.0
    acceptance_log(3, ok, f"N={len(h)} levels={h.level_sizes} axiom failures={failures}/100 t={elapsed:.2f}s")
    assert ok


def test_criterion_4_weight_solver(acceptance_log):
    start = time.perf_counter()
    rng = np.random.default_rng(404)
    worst_gap, best_gap, worst_sum, feasible, monotone = -np.inf, np.inf, 0.0, True, True
    for _ in range(50):
        S, M = int(rng.integers(1, 4)), int(rng.integers(1, 41))
        Z = rng.choice([-1.0, 1.0], size=(M, S))
        fit = solve_weights(Z, 0.1, full_output=True)
        w = fit.weights
        best, _ = oracles.grid_optimum(Z, 0.1, weight_objective)
        gap = weight_objective(w, Z, 0.1) - best
        worst_gap, best_gap = max(worst_gap, gap), min(best_gap, gap)
        worst_sum = max(worst_sum, abs(w.sum() - 1.0))
        feasible &= bool(np.all(w >= 0))
        monotone &= all(b <= a for a, b in zip(fit.objective, fit.objective[1:]))
    elapsed = time.perf_counter() - start
    # the continuous optimum may sit below the 0.01 grid, so only exceeding it counts against us
    ok = worst_gap <= 1e-3 and feasible and worst_sum <= 1e-6 and monotone and elapsed < 30.0
    acceptance_log(4, ok, f"solver - grid in [{best_gap:.2e}, {worst_gap:.2e}] w>=0={feasible} "
                          f"max|sum-1|={worst_sum:.1e} monotone={monotone} t={elapsed:.2f}s")
    assert ok


def test_criterion_5_loss_is_margin_sum(acceptance_log):
    rng = np.random.default_rng(505)
    worst = 0.0
    for _ in range(1000):
        S, M = int(rng.integers(1, 8)), int(rng.integers(1, 50))
        w = rng.dirichlet(np.ones(S))
        Z = rng.choice([-1.0, 1.0], size=(M, S))
        worst = max(worst, abs(ensemble_loss(w, Z) - oracles.margin_sum_loss(w, Z)))
    ok = worst <= 1e-10
    acceptance_log(5, ok, f"max |loss - margin sum| over 1000 pairs = {worst:.2e}")
    assert ok


def test_criterion_6_forest(acceptance_log):
    rng = np.random.default_rng(606)
    truth = rng.integers(1, 11, 200)
    H = np.column_stack([rng.integers(1, 11, (200, 3)), truth, rng.integers(1, 11, (200, 2))])
    labels, _ = train_forest(H, truth, n_trees=50, seed=6).predict(H)
    train_acc = float(np.mean(labels == truth))

    noisy = rng.integers(1, 6, (80, 6))
    y = rng.integers(1, 6, 80)
    runs = [train_forest(noisy, y, n_trees=40, seed=17).predict(noisy) for _ in range(3)]
    same = all(np.array_equal(r[0], runs[0][0]) and np.array_equal(r[1], runs[0][1]) for r in runs)
    ok = train_acc == 1.0 and same
    acceptance_log(6, ok, f"perfect-column train accuracy={train_acc:.3f} seeded runs identical={same}")
    assert ok


@pytest.fixture(scope="module")
def bench_runs(tmp_path_factory):
    runs = []
    for k in range(2):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            result = run_bench(BENCH_SEED)
        out = tmp_path_factory.mktemp(f"bench{k}")
        write_bench(result, out, BENCH_SEED)
        runs.append((result, out))
    return runs


@pytest.mark.slow
def test_criterion_7_benchmark(bench_runs, acceptance_log):
    (first, out_a), (second, out_b) = bench_runs
    flat = first.baseline_accuracy
    finals = {kind: rep.accuracy for kind, rep in first.reports.items()}
    beats_flat = all(acc >= flat for acc in finals.values())

    local = {kind: float(rep.local_patch_accuracy.mean()) for kind, rep in first.reports.items()}
    glob = {kind: float(rep.global_patch_accuracy.mean()) for kind, rep in first.reports.items()}
    lifted = all(glob[k] >= local[k] for k in glob)

    files_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*") if p.is_file())
    identical = files_a == files_b and all((out_a / f).read_bytes() == (out_b / f).read_bytes() for f in files_a)
    fast = max(first.seconds, second.seconds) < 120.0

    ok = beats_flat and lifted and identical and fast
    acceptance_log(7, ok, f"flat={flat:.4f} final={finals} mean local={local} mean global={glob} "
                          f"identical files={identical} ({len(files_a)}) "
                          f"t={first.seconds:.1f}s/{second.seconds:.1f}s")
    assert ok


@pytest.mark.slow
def test_criterion_8_bundle_round_trip(bench_runs, tmp_path, acceptance_log):
    result, _ = bench_runs[0]
    same = {}
    for kind, bundle in result.bundles.items():
        before = identify(bundle, result.probes)
        path = tmp_path / f"{kind}.bundle"
        save_bundle(bundle, path)
        after = identify(load_bundle(path), result.probes)
        same[kind] = ([(r.label, r.score) for r in before] == [(r.label, r.score) for r in after])
    ok = bool(same) and all(same.values())
    acceptance_log(8, ok, f"identify before/after save+load identical: {same}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
