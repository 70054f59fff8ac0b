"""Friedman test with the Iman-Davenport F correction and the two-tailed
Bonferroni-Dunn post-hoc critical difference.

Higher scores are better: the best method in a row gets rank 1 and tied
methods share the average of the ranks they span.
"""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DegenerateDenominator,
    DegenerateRow,
    InvalidScoreTable,
    IoFailure,
    UnsupportedAlphaOrK,
)

# Two-tailed Bonferroni-Dunn critical values q_alpha for k = 2..10 compared
# methods: the standard normal quantile at 1 - alpha / (2 (k - 1)).
Q_ALPHA = {
    0.05: (1.960, 2.241, 2.394, 2.498, 2.576, 2.638, 2.690, 2.734, 2.773),
    0.10: (1.645, 1.960, 2.128, 2.241, 2.326, 2.394, 2.450, 2.498, 2.539),
}
SUPPORTED_ALPHAS = tuple(Q_ALPHA)
MAX_K = 1 + len(Q_ALPHA[0.10])


def _alpha_key(alpha: float) -> float:
    for a in Q_ALPHA:
        if math.isclose(alpha, a, rel_tol=0, abs_tol=1e-12):
            return a
    raise UnsupportedAlphaOrK(f"alpha {alpha} not tabulated; supported: "
                              f"{', '.join(f'{a:.2f}' for a in SUPPORTED_ALPHAS)}")


def q_alpha(k: int, alpha: float) -> float:
    a = _alpha_key(alpha)
    if not 2 <= k <= MAX_K:
        raise UnsupportedAlphaOrK(f"k = {k} methods not tabulated; supported: 2..{MAX_K}")
    return Q_ALPHA[a][k - 2]


@lru_cache(maxsize=1)
def _f_table() -> dict[tuple[float, int, int], float]:
    text = resources.files("hmlmatch").joinpath("data/f_critical.csv").read_text(encoding="utf-8")
    table = {}
    for row in csv.DictReader(io.StringIO(text)):
        table[(float(row["alpha"]), int(row["df1"]), int(row["df2"]))] = float(row["critical"])
    return table


def f_critical(df1: int, df2: int, alpha: float) -> float | None:
    """Upper ``alpha`` point of F(df1, df2) from the embedded table, or None."""
    try:
        a = _alpha_key(alpha)
    except UnsupportedAlphaOrK:
        return None
    return _f_table().get((a, int(df1), int(df2)))


# -- tables -----------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreTable:
    methods: tuple[str, ...]
    datasets: tuple[str, ...]
    scores: np.ndarray  # N x k

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "datasets", tuple(self.datasets))
        if scores.ndim != 2:
            raise InvalidScoreTable("scores must be a 2-D table")
        n, k = scores.shape
        if k < 2 or n < 2:
            raise InvalidScoreTable(f"need at least 2 methods and 2 datasets, got k={k}, N={n}")
        if len(self.methods) != k or len(self.datasets) != n:
            raise InvalidScoreTable("method/dataset names do not match the score matrix shape")
        if len(set(self.methods)) != k:
            raise InvalidScoreTable("duplicate method names")
        if not np.all(np.isfinite(scores)):
            raise InvalidScoreTable("score table has non-finite entries")

    @property
    def k(self) -> int:
        return len(self.methods)

    @property
    def N(self) -> int:
        return len(self.datasets)


@dataclass(frozen=True)
class RankTable:
    methods: tuple[str, ...]
    ranks: np.ndarray          # N x k per-dataset ranks
    average: np.ndarray        # k average ranks
    degenerate_rows: tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return len(self.methods)

    @property
    def N(self) -> int:
        return int(self.ranks.shape[0])


def parse_score_csv(text: str) -> ScoreTable:
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if len(rows) < 2:
        raise InvalidScoreTable("score CSV needs a header and at least one data row")
    header = [c.strip() for c in rows[0]]
    methods = header[1:]
    datasets, values = [], []
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InvalidScoreTable(f"line {n}: expected {len(header)} fields, got {len(row)}")
        datasets.append(row[0].strip())
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError as exc:
            raise InvalidScoreTable(f"line {n}: {exc}") from None
    return ScoreTable(tuple(methods), tuple(datasets), np.array(values))


def read_score_table(path: str | Path) -> ScoreTable:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read score table {path}: {exc}") from None
    return parse_score_csv(text)


def compute_ranks(table: ScoreTable) -> RankTable:
    """Descending-score ranks per dataset (ties averaged) and their column means."""
    ranks = rankdata(-table.scores, method="average", axis=1)
    flat = tuple(int(i) for i in np.nonzero(np.all(table.scores == table.scores[:, :1], axis=1))[0])
    if flat:
        warnings.warn(f"{len(flat)} row(s) tie every method; all ranks set to {(table.k + 1) / 2}",
                      DegenerateRow, stacklevel=2)
    return RankTable(table.methods, ranks, ranks.mean(axis=0), flat)


# -- test statistics --------------------------------------------------------------------

def friedman_chi2(ranks: RankTable | Sequence[float], N: int | None = None) -> float:
    """Friedman's chi-square from average ranks.

    Pass a :class:`RankTable`, or a sequence of average ranks together with ``N``.
    """
    if isinstance(ranks, RankTable):
        R, N = ranks.average, ranks.N
    else:
        if N is None:
            raise TypeError("N is required when passing average ranks")
        R = np.asarray(ranks, dtype=np.float64)
    k = R.shape[0]
    return float(12.0 * N / (k * (k + 1)) * (np.sum(R ** 2) - k * (k + 1) ** 2 / 4.0))


def friedman_F(chi2: float, N: int, k: int) -> float:
    """Iman-Davenport F statistic, distributed as F(k-1, (k-1)(N-1))."""
    denom = N * (k - 1) - chi2
    if not denom > 0:
        raise DegenerateDenominator(f"N(k-1) - chi2 = {denom:g} <= 0 (methods are perfectly "
                                    "separated on every dataset)")
    return float((N - 1) * chi2 / denom)


def bonferroni_dunn_cd(k: int, N: int, alpha: float = 0.10) -> float:
    if N < 1:
        raise UnsupportedAlphaOrK(f"N must be positive, got {N}")
    return q_alpha(k, alpha) * math.sqrt(k * (k + 1) / (6.0 * N))


@dataclass(frozen=True)
class TestResult:
    methods: tuple[str, ...]
    N: int
    alpha: float
    ranks: RankTable
    chi2_F: float
    F_F: float
    df1: int
    df2: int
    F_critical: float | None
    q_alpha: float
    CD: float
    difference: np.ndarray     # k x k, R_a - R_b
    significant: np.ndarray    # k x k bool, |R_a - R_b| > CD

    __test__ = False  # keep pytest from collecting this class

    @property
    def k(self) -> int:
        return len(self.methods)

    @property
    def reject_null(self) -> bool | None:
        """F_F above the tabulated critical value; None when df are not tabulated."""
        return None if self.F_critical is None else self.F_F > self.F_critical

    def better_pairs(self) -> list[tuple[str, str, float]]:
        """(better, worse, rank gap) for every significant pair, largest gap first."""
        out = []
        for a in range(self.k):
            for b in range(self.k):
                if self.significant[a, b] and self.difference[a, b] < 0:
                    out.append((self.methods[a], self.methods[b], float(-self.difference[a, b])))
        return sorted(out, key=lambda t: (-t[2], t[0], t[1]))


def compare_methods(table: ScoreTable, alpha: float = 0.10) -> TestResult:
    ranks = compute_ranks(table)
    k, N = table.k, table.N
    chi2 = friedman_chi2(ranks)
    F = friedman_F(chi2, N, k)
    q = q_alpha(k, alpha)
    cd = bonferroni_dunn_cd(k, N, alpha)
    R = ranks.average
    diff = R[:, None] - R[None, :]
    df1, df2 = k - 1, (k - 1) * (N - 1)
    return TestResult(table.methods, N, alpha, ranks, chi2, F, df1, df2,
                      f_critical(df1, df2, alpha), q, cd, diff, np.abs(diff) > cd)


# -- output -------------------------------------------------------------------------------

def result_text(res: TestResult) -> str:
    width = max(len(m) for m in res.methods)
    lines = [f"Friedman / Bonferroni-Dunn comparison (k={res.k}, N={res.N}, alpha={res.alpha:.2f})",
             "", "average ranks"]
    lines += [f"  {m.ljust(width)}  {r:.4f}" for m, r in zip(res.methods, res.ranks.average)]
    crit = "n/a (df not tabulated)" if res.F_critical is None else f"{res.F_critical:.4f}"
    verdict = {None: "undetermined", True: "rejected", False: "not rejected"}[res.reject_null]
    lines += [
        "",
        f"chi2_F={res.chi2_F:.4f}",
        f"F_F={res.F_F:.1f}  (exact {res.F_F:.6f}; df = {res.df1}, {res.df2})",
        f"F critical = {crit}; null hypothesis {verdict}",
        f"q_alpha={res.q_alpha:.3f}",
        f"CD={res.CD:.2f}  (exact {res.CD:.6f})",
        "",
        "significantly different pairs (better > worse: rank gap)",
    ]
    pairs = res.better_pairs()
    lines += [f"  {a} > {b}: {gap:.4f}" for a, b, gap in pairs] or ["  none"]
    return "\n".join(lines) + "\n"


def ranks_csv(res: TestResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "average_rank"])
    w.writerows([m, f"{r:.6f}"] for m, r in zip(res.methods, res.ranks.average))
    return buf.getvalue()


def pairwise_csv(res: TestResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method_a", "method_b", "rank_difference", "critical_difference", "significant"])
    for a in range(res.k):
        for b in range(a + 1, res.k):
            w.writerow([res.methods[a], res.methods[b], f"{res.difference[a, b]:.6f}",
                        f"{res.CD:.6f}", str(bool(res.significant[a, b])).lower()])
    return buf.getvalue()
