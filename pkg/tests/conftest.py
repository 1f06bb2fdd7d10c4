import hypothesis.extra.numpy as npst
import numpy as np
from hypothesis import HealthCheck, assume, settings
from hypothesis import strategies as st

from scalent.mm_space import DiscreteMeasure, Partition, build_space

settings.register_profile(
    "scalent",
    max_examples=200,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("scalent")


@st.composite
def prob_vectors(draw, min_size=1, max_size=10, floor=0.01):
    n = draw(st.integers(min_size, max_size))
    raw = draw(npst.arrays(np.float64, n, elements=st.floats(floor, 1.0)))
    assume(raw.sum() > 0.01)
    return raw / raw.sum()


@st.composite
def spaces(draw, min_size=2, max_size=12, allow_ties=True):
    """Weighted finite metric spaces: points in the plane, sometimes with
    duplicated points so that the semimetric has zero off-diagonal entries."""
    w = draw(prob_vectors(min_size, max_size))
    n = w.size
    pts = draw(npst.arrays(np.float64, (n, 2), elements=st.floats(-1.0, 1.0)))
    if allow_ties and n > 2 and draw(st.booleans()):
        i, j = draw(st.integers(0, n - 1)), draw(st.integers(0, n - 1))
        pts[i] = pts[j]
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    return build_space(w, dist)


@st.composite
def measures_on(draw, n, max_support=None):
    k = draw(st.integers(1, min(n, max_support or n)))
    support = draw(st.permutations(range(n)))[:k]
    m = draw(prob_vectors(k, k))
    return DiscreteMeasure(tuple(support), m)


@st.composite
def partitions(draw, min_points=1, max_points=14):
    n = draw(st.integers(min_points, max_points))
    labels = draw(st.lists(st.integers(0, 5), min_size=n, max_size=n))
    return Partition.from_labels(labels)


@st.composite
def markov_matrices(draw, min_states=2, max_states=4):
    k = draw(st.integers(min_states, max_states))
    raw = draw(npst.arrays(np.float64, (k, k), elements=st.floats(0.05, 1.0)))
    return raw / raw.sum(axis=1, keepdims=True)


# -- acceptance reporting -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
