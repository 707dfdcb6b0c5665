"""
lbforge: approximate Byzantine consensus under local broadcast.

A deterministic asynchronous simulator, a reference protocol, and a forge
that runs the node-count and connectivity impossibility constructions
against any candidate algorithm and records re-checkable counterexamples.
"""

from .errors import (
    BundleFormatError,
    ConstructionInapplicable,
    GraphFormatError,
    InfeasibleConfiguration,
    InvalidGraphError,
    InvalidPartitionError,
    LbforgeError,
    MissingBehaviorError,
    ScenarioError,
    UnknownNodeError,
    VictimDidNotTerminate,
)
from .graph_core import Graph, check_feasibility, load_graph, vertex_connectivity
from .protocols import ProtocolConfig, approx_consensus_behavior, build_victims
from .sim_engine import Topology, Trace, run

__version__ = "0.1.0"

__all__ = [
    "BundleFormatError",
    "ConstructionInapplicable",
    "GraphFormatError",
    "InfeasibleConfiguration",
    "InvalidGraphError",
    "InvalidPartitionError",
    "LbforgeError",
    "MissingBehaviorError",
    "ScenarioError",
    "UnknownNodeError",
    "VictimDidNotTerminate",
    "Graph",
    "check_feasibility",
    "load_graph",
    "vertex_connectivity",
    "ProtocolConfig",
    "approx_consensus_behavior",
    "build_victims",
    "Topology",
    "Trace",
    "run",
    "__version__",
]
