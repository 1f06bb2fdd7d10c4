import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalent.filtration import (FiltrationError, FiltrationTree, TooShallow, build_bernoulli_filtration,
                                build_rwre_filtration, kantorovich_iteration, standardness_diagnostic)
from scalent.mm_space import SemiMetricSpace, build_space


@st.composite
def trees(draw, weighted=None):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    depth = draw(st.integers(1, 4))
    sizes = [draw(st.integers(1, 7)) for _ in range(depth + 1)]
    fan = [draw(st.integers(1, 3)) for _ in range(depth)]
    use_w = draw(st.booleans()) if weighted is None else weighted
    children = [rng.integers(0, sizes[j], size=(sizes[j + 1], fan[j])) for j in range(depth)]
    weights = [rng.dirichlet(np.ones(fan[j]), size=sizes[j + 1]) if use_w else None for j in range(depth)]
    top = rng.dirichlet(np.ones(sizes[-1]))
    pts = rng.random((sizes[0], 2))
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    probe = FiltrationTree.__new__(FiltrationTree)
    probe.base, probe.children, probe.top_masses = SemiMetricSpace(np.zeros(sizes[0]), dist), children, top
    probe.child_weights = weights
    base = SemiMetricSpace(FiltrationTree.masses(probe)[0], dist)
    return FiltrationTree(base, children, top, weights)


@given(trees())
def test_diameters_bounded_by_base(tree):
    levels = kantorovich_iteration(tree)
    assert np.all(levels.diameters <= levels.diameters[0] + 1e-12)
    for s in levels.spaces[1:]:
        build_space(s.weights, s.dist)


@given(trees(), st.data())
def test_relabeling_cells_commutes_with_iteration(tree, data):
    j = data.draw(st.integers(1, tree.depth))
    n_j = tree.children[j - 1].shape[0]
    perm = np.array(data.draw(st.permutations(range(n_j))))
    inv = np.argsort(perm)
    children = [c.copy() for c in tree.children]
    weights = [None if w is None else w.copy() for w in tree.child_weights]
    children[j - 1] = children[j - 1][perm]
    if weights[j - 1] is not None:
        weights[j - 1] = weights[j - 1][perm]
    top = tree.top_masses
    if j < tree.depth:
        children[j] = inv[children[j]]
    else:
        top = top[perm]
    other = FiltrationTree(tree.base, children, top, weights)
    a, b = kantorovich_iteration(tree), kantorovich_iteration(other)
    assert np.array_equal(a.diameters, b.diameters)
    for sa, sb in zip(a.spaces, b.spaces):
        # merged masses are summed in a different order, so weights agree only to rounding
        assert np.allclose(np.sort(sa.weights), np.sort(sb.weights), rtol=0, atol=1e-15)
        assert np.array_equal(np.sort(sa.dist, axis=None), np.sort(sb.dist, axis=None))


@given(trees(weighted=True), st.data())
def test_equal_conditionals_collapse_all_higher_levels(tree, data):
    j = data.draw(st.integers(1, tree.depth))
    children = [c.copy() for c in tree.children]
    weights = list(tree.child_weights)
    children[j - 1][:] = children[j - 1][0]
    weights[j - 1] = np.tile(weights[j - 1][0], (children[j - 1].shape[0], 1))
    probe = FiltrationTree.__new__(FiltrationTree)
    probe.base, probe.children, probe.top_masses, probe.child_weights = tree.base, children, tree.top_masses, weights
    base = SemiMetricSpace(FiltrationTree.masses(probe)[0], tree.base.dist)
    levels = kantorovich_iteration(FiltrationTree(base, children, tree.top_masses, weights))
    for s in levels.spaces[j:]:
        assert np.all(s.dist == 0)


@given(st.integers(1, 5), st.integers(2, 3), st.sampled_from(["cylinder", "hamming"]), st.data())
def test_product_tree_diameters_nonincreasing(depth, branching, metric, data):
    raw = np.array(data.draw(st.lists(st.floats(0.05, 1.0), min_size=branching, max_size=branching)))
    tree = build_bernoulli_filtration(depth, branching, raw / raw.sum(), metric)
    levels = kantorovich_iteration(tree)
    assert np.all(np.diff(levels.diameters) <= 1e-12)
    assert levels.spaces[0] is tree.base


def test_bernoulli_cylinder_diameters_halve():
    levels = kantorovich_iteration(build_bernoulli_filtration(6))
    assert np.allclose(levels.diameters, 2.0 ** -np.arange(7), rtol=0, atol=1e-15)


def test_tree_json_round_trip():
    tree = build_bernoulli_filtration(3, 2, [0.3, 0.7])
    back = FiltrationTree.from_json(tree.to_json())
    assert np.array_equal(kantorovich_iteration(back).diameters, kantorovich_iteration(tree).diameters)


def test_tree_validation():
    base = SemiMetricSpace(np.array([0.5, 0.5]), np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(FiltrationError):
        FiltrationTree(base, [np.array([[0, 2]])], np.array([1.0]))
    with pytest.raises(FiltrationError):
        FiltrationTree(base, [np.array([[0, 1]])], np.array([1.0]), [np.array([[0.2, 0.2]])])
    with pytest.raises(FiltrationError):
        FiltrationTree(base, [np.array([[0, 0]])], np.array([1.0]))


@pytest.mark.parametrize("diam,label", [
    ((1, 0.5, 0.25, 0.12, 0.06), "standard-like"),
    ((1, 0.9, 0.95, 0.9, 0.92), "nonstandard-like"),
    ((1, 0.7, 0.5, 0.45, 0.44), "inconclusive"),
])
def test_standardness_examples(diam, label):
    assert standardness_diagnostic(diam, 0.1).label == label


def test_standardness_needs_four_levels():
    with pytest.raises(TooShallow):
        standardness_diagnostic([1.0, 0.5, 0.2])
    with pytest.raises(TooShallow):
        standardness_diagnostic([1.0, 0.5, 0.2, 0.1], start=1)


def test_rwre_first_level_observations():
    levels = build_rwre_filtration(1, 3, 64, np.random.default_rng(0))
    obs = levels.spaces[0]
    assert obs.n_points == 4
    assert np.allclose(obs.weights, 0.25, atol=0.1)
    assert np.all(levels.diameters <= levels.diameters[0] + 1e-12)
    again = build_rwre_filtration(1, 3, 64, np.random.default_rng(0))
    assert all(np.array_equal(a.dist, b.dist) for a, b in zip(levels.spaces, again.spaces))
