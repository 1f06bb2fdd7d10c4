import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import measures_on, prob_vectors, spaces
from oracles import transport_oracle
from scalent.mm_space import DiscreteMeasure, build_space
from scalent.transport import (UnsortedPositions, kantorovich, kantorovich_line, solve_transport,
                               transport_cost, verify_coupling)


@given(spaces(), st.data())
def test_symmetry(s, data):
    mu = data.draw(measures_on(s.n_points))
    nu = data.draw(measures_on(s.n_points))
    assert abs(kantorovich(s, mu, nu)[0] - kantorovich(s, nu, mu)[0]) <= 1e-9


@given(spaces(max_size=12), st.data())
def test_triangle_inequality(s, data):
    mu, nu, eta = (data.draw(measures_on(s.n_points)) for _ in range(3))
    d = lambda p, q: kantorovich(s, p, q)[0]  # noqa: E731
    assert d(mu, eta) <= d(mu, nu) + d(nu, eta) + 1e-9


@given(spaces(), st.data())
def test_bounded_by_diameter_and_coupling_valid(s, data):
    mu = data.draw(measures_on(s.n_points))
    nu = data.draw(measures_on(s.n_points))
    dist, c = kantorovich(s, mu, nu)
    assert dist <= s.diameter + 1e-12
    assert verify_coupling(s, mu, nu, c).ok


@given(st.data())
def test_matches_vertex_enumeration(data):
    a = data.draw(prob_vectors(1, 5))
    b = data.draw(prob_vectors(1, 5))
    seed = data.draw(st.integers(0, 2**32 - 1))
    cost = np.random.default_rng(seed).random((a.size, b.size))
    assert abs(solve_transport(cost, a, b).cost - transport_oracle(cost, a, b)) <= 1e-9


@given(spaces(), st.data())
def test_scale_equivariance(s, data):
    mu = data.draw(measures_on(s.n_points))
    nu = data.draw(measures_on(s.n_points))
    base = kantorovich(s, mu, nu)[0]
    for k in (-3, 1, 5):
        lam = 2.0 ** k
        assert kantorovich(s.with_dist(s.dist * lam), mu, nu)[0] == base * lam
    lam = data.draw(st.floats(0.01, 100.0))
    assert kantorovich(s.with_dist(s.dist * lam), mu, nu)[0] == pytest.approx(base * lam, rel=1e-12, abs=1e-15)


@given(spaces())
def test_point_masses_recover_base_distance(s):
    for i in range(s.n_points):
        for j in range(s.n_points):
            d, _ = kantorovich(s, DiscreteMeasure.delta(i), DiscreteMeasure.delta(j))
            assert d == s.dist[i, j]


@given(st.integers(2, 10), st.data())
def test_line_formula_agrees_with_solver(n, data):
    x = np.sort(data.draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n, unique=True)))
    p = data.draw(prob_vectors(n, n, floor=0.0))
    q = data.draw(prob_vectors(n, n, floor=0.0))
    s = build_space(np.full(n, 1 / n), np.abs(x[:, None] - x[None, :]))
    expected = transport_cost(s.dist, p, q)
    assert kantorovich_line(x, p, q) == pytest.approx(expected, abs=1e-9)


def test_line_rejects_unsorted_positions():
    with pytest.raises(UnsortedPositions):
        kantorovich_line([0.0, 0.0, 1.0], [0.5, 0.5, 0], [0, 0.5, 0.5])
