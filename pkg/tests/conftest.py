import numpy as np
import pytest

from dsmt import _kernels
from dsmt.data import AugmentedGraph


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request):
    prev = _kernels.use_backend(request.param)
    yield request.param
    _kernels.use_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_graph(n_entities=12, n_relations=3, n_triples=30, seed=1):
    rng = np.random.default_rng(seed)
    tr = np.stack(
        [
            rng.integers(0, n_entities, n_triples),
            rng.integers(0, n_relations, n_triples),
            rng.integers(0, n_entities, n_triples),
        ],
        axis=1,
    )
    tr = np.unique(tr, axis=0)
    return AugmentedGraph.from_triples(n_entities, n_relations, tr)


@pytest.fixture
def small_graph():
    return random_graph()


def write_triples(path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")
    return path


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
