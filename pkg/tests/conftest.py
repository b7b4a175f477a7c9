import json
from pathlib import Path

import numpy as np
import pytest

from tgembed import _backend, synth, tgraph

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen.json").read_text())

BACKENDS = sorted(_backend.AVAILABLE)


@pytest.fixture
def oracles():
    return ORACLES


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture
def six_node_graph():
    edges = ORACLES["walk"]["edges"]
    return tgraph.from_edges(6, [tuple(e) for e in edges])


@pytest.fixture(scope="session")
def random_graph():
    return synth.random_temporal_graph(100, 1500, t_span=1000, seed=3, weighted=True)


@pytest.fixture(scope="session")
def sbm():
    return synth.temporal_sbm(n_nodes=60, n_edges=500, seed=2)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split("(")[0]), k)):
        terminalreporter.write_line(ACCEPTANCE[key])
