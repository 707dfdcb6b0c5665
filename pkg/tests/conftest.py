from decimal import Decimal
from pathlib import Path

import pytest

from lbforge.graph_core import Graph
from lbforge.protocols import ProtocolConfig

REPO_ROOT = Path(__file__).resolve().parent.parent
GRAPH_DIR = REPO_ROOT / "config" / "graphs"
SCENARIO_DIR = REPO_ROOT / "config" / "scenarios"

EPSILON = Decimal("0.01")

DIAMOND_EDGES = [(0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
WHEEL7_EDGES = [(0, i) for i in range(1, 7)] + [(i, i % 6 + 1) for i in range(1, 7)]


def make_cfg(g: Graph, f: int = 1, epsilon: Decimal = EPSILON) -> ProtocolConfig:
    return ProtocolConfig(epsilon, Decimal(0), Decimal(1), g.n, f)


@pytest.fixture
def complete3() -> Graph:
    return Graph.complete(3)


@pytest.fixture
def complete4() -> Graph:
    return Graph.complete(4)


@pytest.fixture
def diamond() -> Graph:
    """a = 0, b = 1, c1 = 2, c2 = 3."""
    return Graph.from_edges(4, DIAMOND_EDGES)


@pytest.fixture
def wheel7() -> Graph:
    """Hub 0 joined to the 6-cycle 1..6; connectivity 3."""
    return Graph.from_edges(7, WHEEL7_EDGES)


@pytest.fixture
def cfg_factory():
    return make_cfg


@pytest.fixture(autouse=True)
def _quiet_environment(monkeypatch):
    monkeypatch.setenv("LBFORGE_FILE_LOGGING", "false")
    monkeypatch.setenv("LBFORGE_SWEEP_WORKERS", "1")
    monkeypatch.delenv("LBFORGE_DEFAULT_MAX_STEPS", raising=False)
    monkeypatch.delenv("LBFORGE_MAX_LINK_DELAY", raising=False)
    monkeypatch.delenv("LBFORGE_LOG_LEVEL", raising=False)
