import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import markov_matrices, prob_vectors, spaces
from oracles import markov_block_entropy, restricted_entropy_brute
from scalent.dynamics import bernoulli, identity_system, markov, stationary_vector
from scalent.entropy import (BudgetExceeded, EpsilonOutOfRange, NotStationary, NotStochastic, TooLarge,
                             conditional_entropy_rate, epsilon_entropy, epsilon_entropy_oracle, restricted_entropy,
                             restricted_entropy_oracle, shannon, sinai_sequence)
from scalent.mm_space import DiscreteMeasure, Partition, build_space, partition_semimetric, quotient_zero_classes
from scalent.transport import kantorovich


def _binary(t):
    return 0.0 if t in (0.0, 1.0) else -t * math.log(t) - (1 - t) * math.log(1 - t)


# continuity bound for rounding a measure on <= 3 atoms to the oracle's mass grid
GRID = 0.05
GRID_SLACK = GRID * math.log(2) + _binary(GRID)


def test_shannon_values():
    assert shannon([1.0]) == 0.0
    assert shannon([0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-15)
    assert shannon([0.25] * 4) == pytest.approx(math.log(4), abs=1e-15)


@given(prob_vectors(1, 12, floor=0.0))
def test_restricted_entropy_endpoints(p):
    assert restricted_entropy(p, 0.0)[0] == shannon(p)
    assert restricted_entropy(p, 1.0)[0] == 0.0


@given(prob_vectors(1, 10))
def test_restricted_entropy_nonincreasing_in_eps(p):
    values = [restricted_entropy(p, e)[0] for e in np.linspace(0, 1, 41)]
    assert np.all(np.diff(values) <= 1e-12)


@given(prob_vectors(1, 6), st.floats(0.0, 0.9))
def test_restricted_entropy_close_to_grid_oracles(p, eps):
    value, removal = restricted_entropy(p, eps)
    assert removal.sum() <= eps + 1e-12 and np.all(removal <= p + 1e-15)
    assert value <= restricted_entropy_oracle(p, eps) + 1e-9
    assert value <= restricted_entropy_brute(p, eps) + 1e-9


def test_restricted_entropy_quarter_example():
    value, _ = restricted_entropy([0.5, 0.25, 0.25], 0.25)
    assert value == pytest.approx(restricted_entropy_oracle([0.5, 0.25, 0.25], 0.25), abs=1e-12)
    assert value == pytest.approx(shannon([2 / 3, 1 / 3]), abs=1e-12)


@given(spaces(max_size=10), st.floats(0.01, 1.5))
def test_epsilon_entropy_witness_contract(s, eps):
    r = epsilon_entropy(s, None, eps)
    assert r.distance < eps
    assert r.distance == pytest.approx(kantorovich(s, s.uniform_measure(), r.witness)[0], abs=1e-12)
    assert r.value == shannon(r.witness.masses) and r.value >= 0


@given(spaces(max_size=10))
def test_epsilon_entropy_nonincreasing_in_eps(s):
    values = [epsilon_entropy(s, None, e).value for e in np.linspace(0.01, 1.2, 16)]
    assert np.all(np.diff(values) <= 1e-12)


@given(spaces(max_size=8), st.floats(0.02, 0.8))
def test_heuristic_not_below_oracle(s, eps):
    oracle = epsilon_entropy_oracle(s, None, eps)
    # the oracle only searches up to 3 atoms; otherwise it returns mu itself
    if len(oracle.witness.support) <= 3:
        assert epsilon_entropy(s, None, eps).value >= oracle.value - GRID_SLACK


@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.integers(0, 2**32 - 1))
def test_small_eps_on_discrete_space_is_cell_entropy(labels, seed):
    w = np.random.default_rng(seed).dirichlet(np.ones(len(labels)))
    s = partition_semimetric(Partition.from_labels(labels), w)
    q, _ = quotient_zero_classes(s)
    assert epsilon_entropy(s, None, 1e-9).value == pytest.approx(shannon(q.weights), abs=1e-6)


def test_epsilon_entropy_examples():
    two = build_space([0.5, 0.5], [[0, 1], [1, 0]])
    assert epsilon_entropy(two, None, 0.6).value == 0.0
    assert epsilon_entropy_oracle(two, None, 0.6).value == 0.0
    assert epsilon_entropy(two, None, 0.3).value == pytest.approx(shannon([0.8, 0.2]), abs=1e-9)
    assert epsilon_entropy_oracle(two, None, 0.3).value == pytest.approx(shannon([0.8, 0.2]), abs=1e-12)
    assert epsilon_entropy(two, None, 1.5).value == 0.0
    single = build_space([1.0], [[0.0]])
    assert epsilon_entropy_oracle(single, None, 0.1).value == 0.0
    with pytest.raises(EpsilonOutOfRange):
        epsilon_entropy(two, None, 0.0)
    with pytest.raises(TooLarge):
        epsilon_entropy_oracle(build_space(np.full(9, 1 / 9), 1 - np.eye(9)), None, 0.1)


def test_two_pairs_example_below_ln2():
    d = np.array([[0, .1, 1, 1], [.1, 0, 1, 1], [1, 1, 0, .1], [1, 1, .1, 0]])
    s = build_space(np.full(4, 0.25), d)
    heur = epsilon_entropy(s, None, 0.15).value
    oracle = epsilon_entropy_oracle(s, None, 0.15).value
    # mass crossing the gap leaves a point that would otherwise pay 0.1 to reach its medoid,
    # so (0.5 + delta, 0.5 - delta) costs 0.05 + 0.9 delta: feasible up to delta = 1/9
    assert heur < math.log(2) and oracle < math.log(2)
    assert heur == pytest.approx(shannon([0.5 + 1 / 9, 0.5 - 1 / 9]), abs=1e-8)
    assert oracle == pytest.approx(shannon([0.6, 0.4]), abs=1e-12)
    assert abs(heur - oracle) <= GRID_SLACK


@given(markov_matrices(), st.integers(2, 7))
def test_sinai_increments_reach_conditional_rate(P, n_max):
    pi = stationary_vector(P)
    h = conditional_entropy_rate(P, pi)
    H = sinai_sequence(markov(P, pi), n_max)
    assert abs(H[0] - shannon(pi)) <= 1e-12
    assert np.all(np.abs(np.diff(H) - h) < 1e-9)
    assert abs(H[-1] - markov_block_entropy(P, pi, n_max)) < 1e-9


@given(st.one_of(prob_vectors(2, 3), markov_matrices()), st.integers(1, 6), st.integers(1, 6))
def test_sinai_subadditive(params, m, n):
    system = bernoulli(params) if params.ndim == 1 else markov(params)
    H = sinai_sequence(system, m + n)
    assert H[m + n - 1] <= H[m - 1] + H[n - 1] + 1e-9
    assert np.all(np.diff(H) >= -1e-12)


def test_sinai_examples():
    assert np.allclose(sinai_sequence(bernoulli([0.5, 0.5]), 8), np.arange(1, 9) * math.log(2), atol=1e-12)
    assert np.all(sinai_sequence(identity_system(1), 5) == 0)
    P = np.array([[0.9, 0.1], [0.1, 0.9]])
    h = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))
    assert conditional_entropy_rate(P, [0.5, 0.5]) == pytest.approx(h, abs=1e-15)
    expected = math.log(2) + np.arange(6) * h
    assert np.allclose(sinai_sequence(markov(P), 6), expected, atol=1e-12)
    assert conditional_entropy_rate([[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5]) == pytest.approx(math.log(2))
    assert conditional_entropy_rate(np.eye(3), np.full(3, 1 / 3)) == 0.0


def test_rate_and_budget_errors():
    with pytest.raises(NotStochastic):
        conditional_entropy_rate([[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5])
    with pytest.raises(NotStationary):
        conditional_entropy_rate([[0.9, 0.1], [0.5, 0.5]], [0.5, 0.5])
    with pytest.raises(BudgetExceeded):
        sinai_sequence(bernoulli([0.5, 0.5]), 30, budget=1 << 10)


def test_empirical_mode_tracks_exact():
    system = bernoulli([0.3, 0.7])
    exact = sinai_sequence(system, 4)
    emp = sinai_sequence(system, 4, mode="empirical", samples=200_000, seed=3)
    assert np.allclose(emp, exact, atol=0.01)
