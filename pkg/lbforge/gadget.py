"""
Gadget networks for the two impossibility constructions.

A gadget holds several copies of some source nodes, wired so that each copy
hears at most one copy of every source neighbor. Running the victim on a
gadget therefore realises, copy by copy, local views that also occur in
legal executions of the source graph.

Export format (one directive per line, `#` comments):

    n <copy>                 a copy such as 2:slow
    e <copy> <copy>          undirected edge
    d <copy> <copy>          directed edge, tail first
    i <copy> <value>         input
    m <copy> <mode>          normal | crashed | delayed:<time>
"""

import logging
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Callable, Dict, List, Mapping, Set, Tuple, Union

from .copies import CopyId, CopyTag, original_of
from .errors import (
    GraphFormatError,
    InvalidGraphError,
    MissingBehaviorError,
    UnknownNodeError,
)
from .graph_core import CutPartition, Graph, ThreePartition
from .protocols import ProtocolConfig
from .sim_engine import Behavior, StartMode, Topology

__all__ = [
    "CopyId",
    "CopyTag",
    "GadgetGraph",
    "build_theorem1_gadget",
    "build_theorem2_gadget",
    "validate_gadget",
    "lift_behaviors",
    "format_gadget",
    "parse_gadget",
]

logger = logging.getLogger(__name__)

SOLE, CRASH, SLOW, LO, HI = CopyTag.SOLE, CopyTag.CRASH, CopyTag.SLOW, CopyTag.LO, CopyTag.HI


@dataclass(frozen=True)
class GadgetGraph:
    topology: Topology
    inputs: Dict[CopyId, Decimal]
    start_modes: Dict[CopyId, StartMode]
    source: Graph
    partition: Union[ThreePartition, CutPartition]
    construction: int
    delta: int
    mirror: bool = False

    def copies_of(self, u: int) -> List[CopyId]:
        return [c for c in self.topology.copies if c.original == u]


def _pair(u: int, ut: CopyTag, v: int, vt: CopyTag) -> Tuple[CopyId, CopyId]:
    return (CopyId(u, ut), CopyId(v, vt))


def build_theorem1_gadget(
    g: Graph, p: ThreePartition, cfg: ProtocolConfig, delta: int, mirror: bool = False
) -> GadgetGraph:
    """
    Two copies per node of C (crashed and slow), one per node of A and B.

    Sole copies of A and B talk to each other and to the slow copies; crash
    copies only talk among themselves. A starts with L, everyone else with U;
    with `mirror` the slow copies start with L as well.
    """
    if not g.is_complete():
        raise InvalidGraphError("the node-count construction needs a complete graph")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    p.validate(g, cfg.f)
    ab = p.a | p.b

    copies: List[CopyId] = [CopyId(u, SOLE) for u in sorted(ab)]
    for u in sorted(p.c):
        copies += [CopyId(u, CRASH), CopyId(u, SLOW)]

    undirected: Set[Tuple[CopyId, CopyId]] = set()
    for u, v in g.edges:
        if u in ab and v in ab:
            undirected.add(_pair(u, SOLE, v, SOLE))
        elif u in p.c and v in p.c:
            undirected.add(_pair(u, CRASH, v, CRASH))
            undirected.add(_pair(u, SLOW, v, SLOW))
        else:
            outer, inner = (u, v) if v in p.c else (v, u)
            undirected.add(_pair(outer, SOLE, inner, SLOW))

    inputs: Dict[CopyId, Decimal] = {}
    modes: Dict[CopyId, StartMode] = {}
    for c in copies:
        low = c.original in p.a or (mirror and c.tag is SLOW)
        inputs[c] = cfg.lower if low else cfg.upper
        if c.tag is CRASH:
            modes[c] = StartMode.crashed()
        elif c.tag is SLOW:
            modes[c] = StartMode.delayed_until(delta)
        else:
            modes[c] = StartMode.normal()

    gg = GadgetGraph(
        topology=Topology(tuple(copies), frozenset(undirected)),
        inputs=inputs,
        start_modes=modes,
        source=g,
        partition=p,
        construction=1,
        delta=delta,
        mirror=mirror,
    )
    logger.debug("Built node-count gadget: %d copies, mirror=%s", len(copies), mirror)
    return gg


def build_theorem2_gadget(
    g: Graph, p: CutPartition, cfg: ProtocolConfig, delta: int
) -> GadgetGraph:
    """Gadget around a small vertex cut C1 + C2 separating A from B."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    p.validate(g, cfg.f)

    region: Dict[int, str] = {}
    for name in ("a", "b", "c1", "c2"):
        for u in getattr(p, name):
            region[u] = name

    tags = {"a": (LO, HI), "b": (LO, HI), "c1": (LO, HI, CRASH), "c2": (SOLE,)}
    copies = [CopyId(u, t) for u in g.node_ids for t in tags[region[u]]]

    undirected: Set[Tuple[CopyId, CopyId]] = set()
    directed: Set[Tuple[CopyId, CopyId]] = set()
    for x, y in g.edges:
        rx, ry = region[x], region[y]
        if rx == ry == "c2":
            undirected.add(_pair(x, SOLE, y, SOLE))
        elif rx == ry == "c1":
            for t in (LO, HI, CRASH):
                undirected.add(_pair(x, t, y, t))
        elif "c2" not in (rx, ry):
            # within A, within B, A-C1 and B-C1 all pair Lo with Lo and Hi with Hi
            undirected.add(_pair(x, LO, y, LO))
            undirected.add(_pair(x, HI, y, HI))
        else:
            c2, other = (x, y) if rx == "c2" else (y, x)
            side = region[other]
            # A pairs its Lo copy with C2 both ways, B and C1 their Hi copy
            talks, listens = (LO, HI) if side == "a" else (HI, LO)
            undirected.add(_pair(other, talks, c2, SOLE))
            directed.add(_pair(c2, SOLE, other, listens))

    inputs: Dict[CopyId, Decimal] = {}
    modes: Dict[CopyId, StartMode] = {}
    for c in copies:
        inputs[c] = cfg.lower if c.tag is LO else cfg.upper
        if region[c.original] != "c1":
            modes[c] = StartMode.normal()
        elif c.tag is CRASH:
            modes[c] = StartMode.crashed()
        else:
            modes[c] = StartMode.delayed_until(delta)

    gg = GadgetGraph(
        topology=Topology(tuple(copies), frozenset(undirected), frozenset(directed)),
        inputs=inputs,
        start_modes=modes,
        source=g,
        partition=p,
        construction=2,
        delta=delta,
    )
    logger.debug(
        "Built cut gadget: %d copies, %d directed edges", len(copies), len(directed)
    )
    return gg


def validate_gadget(gg: GadgetGraph) -> List[str]:
    """Structural violations; empty when every copy hears at most one copy per neighbor."""
    violations: List[str] = []
    topology = gg.topology
    for u, v in sorted(topology.undirected) + sorted(topology.directed):
        ou, ov = original_of(u), original_of(v)
        if ou == ov:
            violations.append(f"edge {u}-{v} joins two copies of node {ou}")
        elif not gg.source.has_edge(ou, ov):
            violations.append(f"edge {u}-{v} has no source edge {ou}-{ov}")
    for x in topology.copies:
        heard: Dict[int, List[CopyId]] = {}
        for w in topology.in_neighbors(x):
            heard.setdefault(original_of(w), []).append(w)
        for v, ws in sorted(heard.items()):
            if len(ws) > 1:
                violations.append(
                    f"{x} hears {len(ws)} copies of node {v}: {', '.join(map(str, ws))}"
                )
    return violations


def lift_behaviors(
    gg: GadgetGraph, algo: Mapping[int, Callable[[], Behavior]]
) -> Dict[CopyId, Behavior]:
    """A fresh, independent instance of the node's algorithm for every copy."""
    missing = sorted({c.original for c in gg.topology.copies} - set(algo))
    if missing:
        raise MissingBehaviorError(f"no algorithm for node(s) {missing}")
    return {c: algo[c.original]() for c in gg.topology.copies}


def format_gadget(gg: GadgetGraph) -> str:
    topology = gg.topology
    lines = [f"# construction {gg.construction}, delta {gg.delta}, mirror {gg.mirror}"]
    lines += [f"n {c}" for c in topology.copies]
    lines += [f"e {u} {v}" for u, v in sorted(topology.undirected)]
    lines += [f"d {u} {v}" for u, v in sorted(topology.directed)]
    lines += [f"i {c} {gg.inputs[c]}" for c in topology.copies]
    lines += [f"m {c} {gg.start_modes[c]}" for c in topology.copies]
    return "\n".join(lines) + "\n"


def parse_gadget(
    text: str,
) -> Tuple[Topology, Dict[CopyId, Decimal], Dict[CopyId, StartMode]]:
    """Read back the export format: topology, inputs and start modes."""
    copies: List[CopyId] = []
    undirected, directed = set(), set()
    inputs: Dict[CopyId, Decimal] = {}
    modes: Dict[CopyId, StartMode] = {}
    arity = {"n": 1, "e": 2, "d": 2, "i": 2, "m": 2}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        directive, *args = line.split()
        if directive not in arity:
            raise GraphFormatError(f"unknown directive {directive!r}", line_number)
        if len(args) != arity[directive]:
            raise GraphFormatError(f"'{directive}' expects {arity[directive]} fields", line_number)
        try:
            first = CopyId.parse(args[0])
            if directive == "n":
                copies.append(first)
            elif directive == "e":
                undirected.add((first, CopyId.parse(args[1])))
            elif directive == "d":
                directed.add((first, CopyId.parse(args[1])))
            elif directive == "i":
                inputs[first] = Decimal(args[1])
            else:
                modes[first] = StartMode.parse(args[1])
        except (ValueError, InvalidOperation) as e:
            raise GraphFormatError(str(e), line_number)
    known = set(copies)
    for name, mapping in (("input", inputs), ("start mode", modes)):
        if set(mapping) != known:
            raise GraphFormatError(f"every copy needs exactly one {name} line")
    try:
        topology = Topology(tuple(copies), frozenset(undirected), frozenset(directed))
    except (ValueError, UnknownNodeError) as e:
        raise GraphFormatError(f"invalid gadget topology: {e}")
    return topology, inputs, modes
