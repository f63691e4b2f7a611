import numpy as np
import pytest

from metagin.episodes import sample_episode
from metagin.harness.synth import generate_sbm
from metagin.numerics import ParamSet


def tiny_graph(seed: int = 3):
    """Five classes of 15 nodes, d = 6; classes 0-2 train, 3 val, 4 test."""
    return generate_sbm(5, 15, 0.3, 0.05, 6, 3.0, 1.0, [3, 1, 1], seed).to_graph()


@pytest.fixture(scope="session")
def graph():
    return tiny_graph()


@pytest.fixture(scope="session")
def propagated(graph):
    return graph.propagated(2)


@pytest.fixture
def tiny_episode(graph):
    # N=3, K=2, K'=2, M=3
    return sample_episode(graph, None, "train", 3, 2, 2, 3, seed=17)


@pytest.fixture
def tiny_params():
    return ParamSet.init(6, 4, 3, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one verdict line per acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
