import sys

import numpy as np
import pytest

from adabort.circuit import build_memory_circuit
from adabort.mwpm import build_decoding_graph
from adabort.surface_code import build_layout


@pytest.fixture(scope="session")
def layout3():
    return build_layout(3)


@pytest.fixture(scope="session")
def circuit3(layout3):
    return build_memory_circuit(layout3, 3, 0.01)


@pytest.fixture(scope="session")
def graph3(circuit3):
    return build_decoding_graph(circuit3)


@pytest.fixture(scope="session")
def graph5():
    return build_decoding_graph(build_memory_circuit(build_layout(5), 5, 0.01))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
