import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmlmatch.errors import (
    CyclicSpec,
    InvalidSpec,
    IoFailure,
    NonDivisibleImage,
    NonNestingGrid,
    OutOfBoundsRect,
    UnknownPatch,
)
from hmlmatch.hierarchy import (
    ExplicitPatch,
    HierarchySpec,
    PatchId,
    PatchRect,
    build_hierarchy,
    dumps_spec,
    load_spec_file,
    loads_spec,
    parse_levels,
    parse_size,
    texture_lifted_spec,
)

import oracles

X = PatchId


def test_five_level_grid_counts(grid5):
    assert len(grid5) == 87
    assert grid5.level_sizes == (1, 2, 4, 16, 64)
    assert grid5.rooted


def test_single_patch_hierarchy():
    h = build_hierarchy(HierarchySpec.grid([(1, 1)]), 32, 32)
    (p,) = h.patches
    assert h.rect(p) == PatchRect(0, 0, 32, 32)
    assert h.parents(p) == h.children(p) == h.adjacent_siblings(p) == set()
    assert h.related_patches(p) == [p]


def test_example_relations(split3):
    assert split3.parents(X(2, 1)) == {X(1, 1)}
    assert X(1, 1) in split3.ancestors(X(3, 1))
    assert split3.adjacent_siblings(X(2, 1)) == {X(2, 2)}
    assert split3.parents(X(1, 1)) == set()


def test_related_patch_order(split3):
    assert split3.related_patches(X(2, 2)) == [X(2, 2), X(1, 1), X(3, 3), X(3, 4), X(2, 1)]


def test_leaf_with_one_sibling():
    h = build_hierarchy(HierarchySpec.grid([(1, 1), (1, 2)]), 4, 4)
    assert h.related_patches(X(2, 1)) == [X(2, 1), X(1, 1), X(2, 2)]


def test_corner_contact_is_not_adjacency(grid5):
    # X4,1 (top-left 8x8) and X4,6 touch only at a corner
    assert X(4, 6) not in grid5.adjacent_siblings(X(4, 1))
    assert grid5.adjacent_siblings(X(4, 1)) == {X(4, 2), X(4, 5)}


def test_siblings_need_a_common_parent(grid5):
    # X3,2 and X3,3 share an edge but sit under different halves
    assert X(3, 3) not in grid5.adjacent_siblings(X(3, 2))


def test_unknown_patch(grid5):
    with pytest.raises(UnknownPatch):
        grid5.parents(X(6, 1))
    with pytest.raises(UnknownPatch):
        grid5.related_patches(X(2, 3))


@pytest.mark.parametrize("levels, size, err", [
    ([(1, 1), (3, 3)], (32, 32), NonDivisibleImage),
    ([(1, 1), (2, 2), (3, 3)], (36, 36), NonNestingGrid),
    ([(2, 2), (1, 1)], (32, 32), NonNestingGrid),
])
def test_bad_grids(levels, size, err):
    with pytest.raises(err):
        build_hierarchy(HierarchySpec.grid(levels), *size)


def test_explicit_errors():
    root = ExplicitPatch(X(1, 1), PatchRect(0, 0, 8, 8))
    with pytest.raises(OutOfBoundsRect):
        build_hierarchy(HierarchySpec.explicit([ExplicitPatch(X(1, 1), PatchRect(0, 0, 9, 8))], (8, 8)))
    cyc = [ExplicitPatch(X(1, 1), PatchRect(0, 0, 8, 8), X(1, 2)),
           ExplicitPatch(X(1, 2), PatchRect(0, 0, 8, 8), X(1, 1))]
    with pytest.raises((CyclicSpec, InvalidSpec)):
        build_hierarchy(HierarchySpec.explicit(cyc, (8, 8)))
    orphan = [root, ExplicitPatch(X(2, 1), PatchRect(0, 0, 4, 4), X(2, 9))]
    with pytest.raises(InvalidSpec):
        build_hierarchy(HierarchySpec.explicit(orphan, (8, 8)))


def test_texture_lifted_default():
    h = build_hierarchy(texture_lifted_spec())
    assert len(h) == 7
    assert h.n_levels == 2
    assert h.level_sizes == (2, 5)
    for p in h.level(2):
        assert len(h.parents(p)) == 1


def test_spec_round_trip(tmp_path):
    spec = texture_lifted_spec()
    again = loads_spec(dumps_spec(spec))
    assert build_hierarchy(again) == build_hierarchy(spec)
    path = tmp_path / "s.toml"
    path.write_text(dumps_spec(spec))
    assert build_hierarchy(load_spec_file(path)) == build_hierarchy(spec)
    with pytest.raises(IoFailure):
        load_spec_file(tmp_path / "missing.toml")
    with pytest.raises(InvalidSpec):
        loads_spec("mode = [")


def test_grid_to_explicit_round_trip(grid5):
    assert build_hierarchy(grid5.to_explicit_spec()) == grid5


def test_parsers():
    assert parse_levels("1x1, 1x2,2x2") == ((1, 1), (1, 2), (2, 2))
    assert parse_size("32x24") == (32, 24)
    with pytest.raises(InvalidSpec):
        parse_levels("1by1")
    assert PatchId.parse("X2,1") == X(2, 1) == PatchId.parse("2,1")
    assert str(X(3, 4)) == "X3,4"


def test_describe_mentions_count(grid5):
    assert grid5.describe().splitlines()[0] == "N=87"


# -- properties on random grids ----------------------------------------------------------

def _check_axioms(h):
    for p in h.patches:
        for q in h.children(p):
            assert p in h.parents(q)
        for q in h.parents(p):
            assert p in h.children(q)
        for q in h.adjacent_siblings(p):
            assert p in h.adjacent_siblings(q)
            assert h.parents(q) == h.parents(p)
        assert h.parents(p) == oracles.brute_parents(h, p)
        assert h.adjacent_siblings(p) == oracles.brute_siblings(h, p)
        assert h.ancestors(p) == oracles.reachable(h.parents, p) == oracles.brute_ancestors(h, p)
        assert h.descendants(p) == oracles.reachable(h.children, p) == oracles.brute_descendants(h, p)
        S = len(h.related_patches(p))
        assert S == 1 + len(h.parents(p)) + len(h.children(p)) + len(h.adjacent_siblings(p))
    # exact tiling per level
    H, W = h.image_size
    for lv in range(1, h.n_levels + 1):
        cover = np.zeros((H, W), dtype=int)
        for p in h.level(lv):
            r = h.rect(p)
            cover[r.top:r.bottom, r.left:r.right] += 1
        assert np.all(cover == 1)
    assert sum(h.level_sizes) == len(h)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relation_axioms_hold_on_random_grids(seed):
    _check_axioms(oracles.random_hierarchy(np.random.default_rng(seed)))


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 6), st.integers(0, 6))
def test_touches_is_symmetric(h1, w1, dt, dl):
    a = PatchRect(3, 3, h1, w1)
    b = PatchRect(dt, dl, 3, 3)
    assert a.touches(b) == b.touches(a)
