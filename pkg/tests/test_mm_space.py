import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import partitions, prob_vectors, spaces
from oracles import join_labels
from scalent.mm_space import (BadWeights, DimensionMismatch, DiscreteMeasure, InvalidMeasure, NegativeDistance,
                              NonSymmetric, Partition, TriangleViolation, build_space, format_space, join,
                              parse_space, partition_semimetric, quotient_zero_classes, renormalize,
                              sample_distance_matrix, sup_combine)


def _weights(n, seed):
    return np.random.default_rng(seed).dirichlet(np.ones(n))


@given(partitions(), st.integers(0, 2**32 - 1))
def test_quotient_of_partition_semimetric_has_k_points(p, seed):
    s = partition_semimetric(p, _weights(len(p.cell_of), seed))
    q, index_map = quotient_zero_classes(s)
    assert q.n_points == p.k
    assert np.allclose(q.weights, p.cell_masses(s.weights), atol=1e-12)
    assert np.array_equal(q.dist[np.ix_(index_map, index_map)], s.dist)


@given(st.integers(1, 12), st.data())
def test_sup_combine_commutative_and_associative(n, data):
    w = _weights(n, data.draw(st.integers(0, 999)))
    three = [partition_semimetric(Partition.from_labels(data.draw(st.lists(st.integers(0, 3), min_size=n,
                                                                          max_size=n))), w)
             for _ in range(3)]
    a, b, c = three
    assert np.array_equal(sup_combine([a, b]).dist, sup_combine([b, a]).dist)
    assert np.array_equal(sup_combine([sup_combine([a, b]), c]).dist, sup_combine([a, sup_combine([b, c])]).dist)
    assert np.array_equal(sup_combine([a, b, c]).dist, sup_combine([c, a, b]).dist)


@given(st.integers(1, 14), st.data())
def test_sup_of_partition_metrics_is_metric_of_join(n, data):
    w = _weights(n, data.draw(st.integers(0, 999)))
    labels = [data.draw(st.lists(st.integers(0, 4), min_size=n, max_size=n)) for _ in range(data.draw(
        st.integers(1, 4)))]
    parts = [Partition.from_labels(lab) for lab in labels]
    combined = sup_combine([partition_semimetric(p, w) for p in parts])
    expected = partition_semimetric(Partition.from_labels(join_labels(*labels)), w)
    assert np.array_equal(combined.dist, expected.dist)
    j = parts[0]
    for p in parts[1:]:
        j = join(j, p)
    assert np.array_equal(partition_semimetric(j, w).dist, expected.dist)


@given(spaces())
def test_text_format_round_trip(s):
    back = parse_space(format_space(s))
    assert np.array_equal(back.weights, s.weights)
    assert np.array_equal(back.dist, s.dist)


@given(spaces())
def test_built_spaces_are_semimetrics(s):
    d = s.dist
    assert np.array_equal(d, d.T)
    assert np.all(np.diag(d) == 0) and np.all(d >= 0)
    assert (d[:, :, None] - d[:, None, :] - d[None, :, :]).max() <= 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_sampling_invariant_under_relabeling(seed):
    rng = np.random.default_rng(seed)
    n = 7
    pts = rng.random((n, 2))
    w = rng.dirichlet(np.ones(n))
    dist = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
    perm = rng.permutation(n)
    s = build_space(w, dist)
    t = build_space(w[perm], dist[np.ix_(perm, perm)])
    k = 3
    iu = np.triu_indices(k, 1)
    draws = 10_000
    x = np.array([sample_distance_matrix(s, k, rng)[iu] for _ in range(draws)]).ravel()
    y = np.array([sample_distance_matrix(t, k, rng)[iu] for _ in range(draws)]).ravel()
    assert stats.ks_2samp(x, y).pvalue > 0.01


def test_validation_errors():
    w = np.array([0.5, 0.5])
    with pytest.raises(NonSymmetric):
        build_space(w, [[0, 1], [2, 0]])
    with pytest.raises(NegativeDistance):
        build_space(w, [[0, -1], [-1, 0]])
    with pytest.raises(BadWeights):
        build_space([0.5, 0.6], [[0, 1], [1, 0]])
    with pytest.raises(TriangleViolation):
        build_space(np.full(3, 1 / 3), [[0, 1, 5], [1, 0, 1], [5, 1, 0]])
    with pytest.raises(DimensionMismatch):
        build_space(w, np.zeros((3, 3)))
    with pytest.raises(InvalidMeasure):
        DiscreteMeasure((0, 0), np.array([0.5, 0.5]))


@given(prob_vectors())
def test_renormalize_gives_exact_simplex_point(p):
    q = renormalize(p * 3.0)
    assert abs(q.sum() - 1) <= 1e-12
