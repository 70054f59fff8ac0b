import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from hmlmatch.errors import DegenerateDenominator, DegenerateRow, InvalidScoreTable, UnsupportedAlphaOrK
from hmlmatch.stats import (
    Q_ALPHA,
    ScoreTable,
    bonferroni_dunn_cd,
    compare_methods,
    compute_ranks,
    f_critical,
    friedman_F,
    friedman_chi2,
    pairwise_csv,
    parse_score_csv,
    q_alpha,
    ranks_csv,
    read_score_table,
    result_text,
)

import oracles


def _table(scores, methods=None):
    scores = np.asarray(scores, dtype=float)
    methods = methods or [f"m{j}" for j in range(scores.shape[1])]
    return ScoreTable(tuple(methods), tuple(f"d{i}" for i in range(scores.shape[0])), scores)


def test_five_method_ranks(data_dir):
    r = compute_ranks(read_score_table(data_dir / "five_methods.csv"))
    assert r.methods == ("MLS", "MPCRC", "V-HML", "W-HML", "R-HML")
    np.testing.assert_array_equal(r.average, [5, 3.5, 2, 1, 3.5])


def test_two_methods_one_dominates():
    r = compute_ranks(_table([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3]]))
    np.testing.assert_array_equal(r.average, [1, 2])


def test_tie_for_best_is_averaged():
    r = compute_ranks(_table([[0.9, 0.9, 0.1], [0.3, 0.2, 0.1]]))
    np.testing.assert_array_equal(r.ranks[0], [1.5, 1.5, 3])


def test_all_tied_row_is_flagged():
    with pytest.warns(DegenerateRow):
        r = compute_ranks(_table([[0.5, 0.5, 0.5], [0.3, 0.2, 0.1]]))
    np.testing.assert_array_equal(r.ranks[0], [2, 2, 2])
    assert r.degenerate_rows == (0,)


def test_chi2_examples():
    assert friedman_chi2([5, 3.5, 2, 1, 3.5], N=8) == pytest.approx(30.4, abs=1e-9)
    assert friedman_chi2([5 / 3, 4 / 3], N=30) == pytest.approx(10 / 3, abs=1e-12)
    with pytest.warns(DegenerateRow):
        tied = compute_ranks(_table(np.ones((4, 3))))
    assert friedman_chi2(tied) == 0.0


def test_F_examples():
    assert friedman_F(30.4, 8, 5) == pytest.approx(133.0, abs=1e-9)
    assert friedman_F(10 / 3, 30, 2) == pytest.approx(3.625, abs=1e-12)
    assert friedman_F(0.0, 10, 3) == 0.0
    # ranks rounded to two decimals as printed
    chi = friedman_chi2([1.67, 1.33], N=30)
    assert 3.60 <= friedman_F(chi, 30, 2) <= 3.80
    with pytest.raises(DegenerateDenominator):
        friedman_F(8.0, 8, 2)


def test_cd_examples():
    assert bonferroni_dunn_cd(5, 8, 0.10) == pytest.approx(1.77, abs=0.01)
    assert bonferroni_dunn_cd(2, 30, 0.10) == pytest.approx(0.30, abs=0.01)
    assert bonferroni_dunn_cd(4, 40, 0.05) == pytest.approx(bonferroni_dunn_cd(4, 10, 0.05) / 2)
    assert q_alpha(5, 0.10) == 2.241
    assert round(q_alpha(2, 0.10), 2) == 1.65


def test_q_table_matches_normal_quantiles():
    for alpha, row in Q_ALPHA.items():
        for k, q in enumerate(row, start=2):
            assert q == pytest.approx(sps.norm.ppf(1 - alpha / (2 * (k - 1))), abs=5e-4)


def test_unsupported_alpha_or_k():
    with pytest.raises(UnsupportedAlphaOrK):
        bonferroni_dunn_cd(5, 8, 0.2)
    with pytest.raises(UnsupportedAlphaOrK):
        bonferroni_dunn_cd(11, 8, 0.1)


def test_f_critical_table():
    assert f_critical(4, 28, 0.10) == pytest.approx(2.157, abs=5e-4)
    assert f_critical(1, 29, 0.10) == pytest.approx(2.88, abs=0.01)
    rng = np.random.default_rng(0)
    for _ in range(30):
        k, N = int(rng.integers(2, 11)), int(rng.integers(2, 101))
        d1, d2 = k - 1, (k - 1) * (N - 1)
        for a in (0.05, 0.10):
            assert f_critical(d1, d2, a) == pytest.approx(sps.f.ppf(1 - a, d1, d2), abs=1e-6)
    assert f_critical(1, 10_000, 0.10) is None
    assert f_critical(1, 29, 0.2) is None


def test_compare_five_methods(data_dir):
    res = compare_methods(read_score_table(data_dir / "five_methods.csv"), 0.10)
    m = {name: j for j, name in enumerate(res.methods)}
    assert res.df1 == 4 and res.df2 == 28
    assert res.reject_null
    assert res.significant[m["W-HML"], m["MPCRC"]]
    assert abs(res.difference[m["MPCRC"], m["W-HML"]]) == 2.5
    assert not res.significant[m["MPCRC"], m["V-HML"]]
    assert set((a, b) for a, b, _ in res.better_pairs()) == {
        ("W-HML", "MLS"), ("W-HML", "MPCRC"), ("W-HML", "R-HML"), ("V-HML", "MLS")}


def test_compare_two_methods(data_dir):
    res = compare_methods(read_score_table(data_dir / "two_methods.csv"), 0.10)
    np.testing.assert_allclose(res.ranks.average, [5 / 3, 4 / 3])
    assert res.better_pairs() == [("HML", "UR2D", pytest.approx(1 / 3))]


def test_outputs(data_dir):
    res = compare_methods(read_score_table(data_dir / "five_methods.csv"), 0.10)
    text = result_text(res)
    assert "F_F=133.0" in text and "CD=1.77" in text
    assert ranks_csv(res).splitlines()[1] == "MLS,5.000000"
    rows = pairwise_csv(res).splitlines()
    assert len(rows) == 1 + 10
    assert rows[0] == "method_a,method_b,rank_difference,critical_difference,significant"


def test_bad_tables():
    with pytest.raises(InvalidScoreTable):
        _table([[1.0, 2.0]])
    with pytest.raises(InvalidScoreTable):
        _table([[1.0], [2.0]])
    with pytest.raises(InvalidScoreTable):
        _table([[1.0, np.nan], [1.0, 2.0]])
    with pytest.raises(InvalidScoreTable):
        parse_score_csv("d,a,b\nx,1,2,3\ny,1,2\n")
    with pytest.raises(InvalidScoreTable):
        parse_score_csv("d,a,b\nx,1,zz\ny,1,2\n")


# -- properties -------------------------------------------------------------------------------

tables = st.integers(0, 2**31).map(lambda s: np.random.default_rng(s)).map(
    lambda r: np.round(r.random((int(r.integers(2, 12)), int(r.integers(2, 8)))), 1))


@settings(max_examples=80, deadline=None)
@given(tables)
def test_rank_sums_and_brute_force_chi2(scores):
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateRow)
        r = compute_ranks(_table(scores))
    k = scores.shape[1]
    np.testing.assert_allclose(r.ranks.sum(axis=1), k * (k + 1) / 2)
    assert r.average.sum() == pytest.approx(k * (k + 1) / 2)
    assert friedman_chi2(r) == pytest.approx(oracles.friedman_brute(scores), abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(tables, st.integers(0, 2**31))
def test_invariances(scores, seed):
    import warnings
    rng = np.random.default_rng(seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateRow)
        base = compute_ranks(_table(scores))
        mono = compute_ranks(_table(np.exp(3 * scores) + 7))
        rows = rng.permutation(scores.shape[0])
        cols = rng.permutation(scores.shape[1])
        by_row = compute_ranks(_table(scores[rows]))
        by_col = compute_ranks(_table(scores[:, cols]))
    assert friedman_chi2(mono) == pytest.approx(friedman_chi2(base), abs=1e-12)
    assert friedman_chi2(by_row) == pytest.approx(friedman_chi2(base), abs=1e-12)
    np.testing.assert_allclose(by_row.average, base.average)
    np.testing.assert_allclose(by_col.average, base.average[cols])
