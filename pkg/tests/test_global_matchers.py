import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmlmatch.errors import AllAbstain, DegenerateWeights, DimensionMismatch, InsufficientSamples
from hmlmatch.forest import predict_forest, train_forest
from hmlmatch.global_matchers import (
    GlobalModel,
    build_H,
    build_Z,
    ensemble_loss,
    ensemble_margin,
    project_simplex,
    renormalize,
    solve_weights,
    train_global,
    vote_global,
    weight_objective,
    weighted_global_match,
)
from hmlmatch.hierarchy import PatchId
from hmlmatch.local import ABSTAIN_LABEL, MatchingTable

import oracles

X = PatchId


def _table(h, M, rng, n_classes=4):
    labels = rng.integers(1, n_classes + 1, size=(M, len(h)))
    return MatchingTable(h.patches, labels, rng.random((M, len(h))))


# -- H and Z ----------------------------------------------------------------------------------

def test_build_H_columns(split3, rng):
    table = _table(split3, 3, rng)
    H = build_H(table, split3, X(2, 2))
    assert H.shape == (3, 5)
    assert H.columns == [X(2, 2), X(1, 1), X(3, 3), X(3, 4), X(2, 1)]
    np.testing.assert_array_equal(H.labels[:, 0], table.labels[:, table.column(X(2, 2))])
    np.testing.assert_array_equal(H.labels[:, 4], table.labels[:, table.column(X(2, 1))])


def test_build_H_isolated_patch(rng):
    from hmlmatch.hierarchy import HierarchySpec, build_hierarchy
    h = build_hierarchy(HierarchySpec.grid([(1, 1)]), 4, 4)
    table = _table(h, 6, rng)
    H = build_H(table, h, X(1, 1))
    assert H.shape == (6, 1)
    np.testing.assert_array_equal(H.labels[:, 0], table.labels[:, 0])


def test_build_H_keeps_abstain(split3, rng):
    table = _table(split3, 2, rng)
    table.labels[1, table.column(X(2, 1))] = ABSTAIN_LABEL
    H = build_H(table, split3, X(2, 2))
    assert H.labels[1, 4] == ABSTAIN_LABEL


def test_build_Z():
    np.testing.assert_array_equal(build_Z(np.array([[2, 1, 2]]), [2]), [[1, -1, 1]])
    np.testing.assert_array_equal(build_Z(np.array([[3, 3]]), [3]), [[1, 1]])
    np.testing.assert_array_equal(build_Z(np.array([[0, 3]]), [3]), [[-1, 1]])
    with pytest.raises(DimensionMismatch):
        build_Z(np.array([[1, 2]]), [1, 2])


# -- voting -------------------------------------------------------------------------------------

def test_vote_examples():
    assert vote_global([3, 3, 5, 2], [0.1, 0.1, 0.9, 0.9]).label == 3
    assert vote_global([3, 3, 5, 5], [0.8, 0.8, 0.6, 0.6]).label == 3
    assert vote_global([3, 3, 5, 5], [0.5, 0.5, 0.6, 0.6]).label == 5
    assert vote_global([7], [0.2]).label == 7
    assert vote_global([0, 4, 0], [-np.inf, 0.3, -np.inf]).label == 4
    with pytest.raises(AllAbstain):
        vote_global([0, 0], [-np.inf, -np.inf])


def test_weighted_examples():
    assert weighted_global_match([0.7, 0.2, 0.1], [4, 9, 9], [0, 0, 0]) == (4, pytest.approx(0.7))
    for labels in ([1, 2, 3], [5, 5, 2], [8, 1, 1]):
        assert weighted_global_match([1, 0, 0], labels, [0, 0, 0]).label == labels[0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=9), st.integers(0, 2**31))
def test_uniform_weights_agree_with_vote(labels, seed):
    labels = np.array(labels)
    counts = np.bincount(labels)
    if np.sum(counts == counts.max()) > 1:
        return  # count tie: the two rules may legitimately differ only on scores
    scores = np.random.default_rng(seed).random(labels.size)
    w = np.full(labels.size, 1.0 / labels.size)
    assert weighted_global_match(w, labels, scores).label == vote_global(labels, scores).label


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_weighted_match_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    S = int(rng.integers(1, 8))
    w = rng.dirichlet(np.ones(S))
    labels = rng.integers(1, 4, S)
    scores = rng.random(S)
    perm = rng.permutation(S)
    assert (weighted_global_match(w, labels, scores).label
            == weighted_global_match(w[perm], labels[perm], scores[perm]).label)


# -- margins and loss -------------------------------------------------------------------------

def test_margin_examples(rng):
    assert ensemble_margin([0.5, 0.2, 0.3], [1, -1, 1]) == pytest.approx(0.6)
    w = rng.dirichlet(np.ones(4))
    assert ensemble_margin(w, np.ones(4)) == pytest.approx(1.0)
    assert ensemble_margin(w, -np.ones(4)) == pytest.approx(-1.0)


def test_loss_examples(rng):
    assert ensemble_loss([0.5, 0.2, 0.3], [[1, -1, 1]]) == pytest.approx(0.16)
    assert ensemble_loss(rng.dirichlet(np.ones(3)), np.ones((5, 3))) == pytest.approx(0.0, abs=1e-15)
    Z = rng.choice([-1.0, 1.0], size=(10, 3))
    w = rng.dirichlet(np.ones(3))
    assert abs(ensemble_loss(w, Z) - oracles.margin_sum_loss(w, Z)) < 1e-10


# -- weight solver ------------------------------------------------------------------------------

def test_dominant_column_gets_all_weight():
    Z = np.column_stack([np.ones(12), -np.ones(12)])
    w = solve_weights(Z, 0.1)
    np.testing.assert_allclose(w, [1.0, 0.0], atol=0.05)


def test_single_column():
    np.testing.assert_array_equal(solve_weights(np.array([[1.0], [-1.0]]), 0.1), [1.0])


def test_solver_beats_uniform_and_vertices(rng):
    # the solver stops once an iteration gains < 1e-9, so compare at that scale
    tol = 1e-8
    for _ in range(30):
        S = int(rng.integers(2, 7))
        Z = rng.choice([-1.0, 1.0], size=(int(rng.integers(1, 30)), S))
        fit = solve_weights(Z, 0.1, full_output=True)
        f = weight_objective(fit.weights, Z, 0.1)
        assert f <= weight_objective(np.full(S, 1 / S), Z, 0.1) + tol
        for k in range(S):
            assert f <= weight_objective(np.eye(S)[k], Z, 0.1) + tol
        assert np.all(fit.weights >= 0) and abs(fit.weights.sum() - 1) < 1e-12
        assert all(b <= a for a, b in zip(fit.objective, fit.objective[1:]))


def test_random_20x3_against_grid(rng):
    Z = rng.choice([-1.0, 1.0], size=(20, 3))
    w = solve_weights(Z, 0.1)
    best, _ = oracles.grid_optimum(Z, 0.1, weight_objective)
    assert weight_objective(w, Z, 0.1) <= best + 1e-3


def test_all_zero_weights_fall_back_to_uniform():
    with pytest.warns(DegenerateWeights):
        w, flagged = renormalize(np.zeros(4))
    assert flagged
    np.testing.assert_array_equal(w, np.full(4, 0.25))
    w, flagged = renormalize(np.array([0.0, 2.0, 2.0]))
    assert not flagged and np.array_equal(w, [0.0, 0.5, 0.5])


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=8))
def test_project_simplex_is_feasible(v):
    w = project_simplex(np.array(v))
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-9


# -- forest -------------------------------------------------------------------------------------

def test_forest_perfect_column(rng):
    truth = rng.integers(1, 6, 60)
    H = np.column_stack([truth, rng.integers(1, 6, (60, 3))])
    f = train_forest(H, truth, n_trees=25, max_depth=None, seed=3)
    labels, _ = f.predict(H)
    assert np.array_equal(labels, truth)


def test_forest_single_class(rng):
    H = rng.integers(1, 4, (10, 3))
    f = train_forest(H, np.full(10, 2), n_trees=5, seed=0)
    assert np.all(f.predict(rng.integers(1, 4, (8, 3)))[0] == 2)


def test_forest_seed_determinism(rng):
    H = rng.integers(1, 5, (40, 5))
    truth = rng.integers(1, 5, 40)
    a = train_forest(H, truth, n_trees=20, seed=11).predict(H)
    b = train_forest(H, truth, n_trees=20, seed=11).predict(H)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_forest_vote_share():
    H = np.array([[5, 1], [5, 2], [5, 3]])
    f = train_forest(H, [5, 5, 5], n_trees=7, seed=0)
    assert predict_forest(f, [5, 9]) == (5, 1.0)
    # 150 trees, 90 of them say 2
    from hmlmatch.forest import ForestModel, Tree
    leaf = lambda lab: Tree(np.array([-1]), np.array([0]), np.array([0]), np.array([0]), np.array([lab]), 0)
    forest = ForestModel([leaf(2)] * 90 + [leaf(1)] * 60, 1, np.array([1, 2]), 16, 0)
    assert predict_forest(forest, [1]) == (2, 0.6)


def test_forest_errors():
    with pytest.raises(InsufficientSamples):
        train_forest(np.array([[1, 2]]), [1])
    f = train_forest(np.array([[1, 2], [2, 1]]), [1, 2], n_trees=2)
    with pytest.raises(DimensionMismatch):
        f.predict(np.array([[1, 2, 3]]))


# -- global models ------------------------------------------------------------------------------

def test_all_abstain_rows_abstain(split3, rng):
    table = _table(split3, 4, rng)
    table.labels[2, :] = ABSTAIN_LABEL
    H = build_H(table, split3, X(2, 1))
    truth = rng.integers(1, 5, 4)
    for kind in ("vote", "weights"):
        labels, scores = train_global(kind, H, truth).predict(H)
        assert labels[2] == ABSTAIN_LABEL and scores[2] == -np.inf
        assert np.all(labels[[0, 1, 3]] != ABSTAIN_LABEL)


def test_global_model_row_api(split3, rng):
    table = _table(split3, 5, rng)
    H = build_H(table, split3, X(1, 1))
    model = train_global("vote", H, rng.integers(1, 5, 5))
    assert isinstance(model, GlobalModel)
    rec = model.predict_row(H.labels[0], H.scores[0])
    assert rec.label == vote_global(H.labels[0], H.scores[0]).label
