import numpy as np
import pytest
from hypothesis import settings
from hypothesis import strategies as st

from hyperdet.hypergraph import Hypergraph

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@st.composite
def hypergraphs(draw, max_n=30, max_m=40, weighted=False):
    n = draw(st.integers(2, max_n))
    m = draw(st.integers(0, max_m))
    edges = []
    for _ in range(m):
        size = draw(st.integers(2, min(n, 6)))
        edges.append(draw(st.lists(st.integers(0, n - 1), min_size=size, max_size=size, unique=True)))
    weights = None
    if weighted:
        weights = draw(st.lists(st.floats(0.0, 5.0), min_size=m, max_size=m))
    return Hypergraph(n, edges, weights)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
