"""
Graph Core for the Local-Broadcast Consensus Forge

Undirected communication graphs, vertex connectivity, and the deterministic
partition/cut machinery used by both impossibility constructions.

Graph text format:
    # comment
    n 4
    e 0 2
    e 0 3

Node identifiers are dense integers 0..n-1.
"""

import logging
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import FrozenSet, Iterable, List, Optional, Tuple, Union

import networkx as nx

from .errors import (
    ConstructionInapplicable,
    GraphFormatError,
    InvalidGraphError,
    InvalidPartitionError,
    ScenarioError,
)

logger = logging.getLogger(__name__)

NodeSet = FrozenSet[int]
Edge = Tuple[int, int]


def _norm_edge(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph over dense node ids 0..n-1."""

    n: int
    edges: FrozenSet[Edge] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidGraphError(f"node count must be at least 1, got {self.n}")
        normalized = set()
        for u, v in self.edges:
            if u == v:
                raise InvalidGraphError(f"self-loop on node {u}")
            for x in (u, v):
                if not 0 <= x < self.n:
                    raise InvalidGraphError(f"edge endpoint {x} not in 0..{self.n - 1}")
            normalized.add(_norm_edge(u, v))
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Tuple[int, int]]) -> "Graph":
        return cls(n, frozenset(tuple(e) for e in edges))

    @classmethod
    def complete(cls, n: int) -> "Graph":
        return cls(n, frozenset(combinations(range(n), 2)))

    @classmethod
    def cycle(cls, n: int) -> "Graph":
        return cls(n, frozenset(_norm_edge(i, (i + 1) % n) for i in range(n)))

    @property
    def node_ids(self) -> Tuple[int, ...]:
        return tuple(range(self.n))

    def has_edge(self, u: int, v: int) -> bool:
        return _norm_edge(u, v) in self.edges

    def neighbors(self, u: int) -> NodeSet:
        if not 0 <= u < self.n:
            raise InvalidGraphError(f"unknown node {u}")
        return frozenset(
            b if a == u else a for a, b in self.edges if u in (a, b)
        )

    def is_complete(self) -> bool:
        return len(self.edges) == self.n * (self.n - 1) // 2

    def completed(self) -> "Graph":
        return Graph.complete(self.n)

    def to_networkx(self) -> nx.Graph:
        G = nx.Graph()
        G.add_nodes_from(self.node_ids)
        G.add_edges_from(sorted(self.edges))
        return G


@dataclass(frozen=True)
class FaultModel:
    """Maximum number of Byzantine nodes."""

    f: int

    def check(self, n: int) -> None:
        if not 0 < self.f < n:
            raise ScenarioError(f"f must satisfy 0 < f < n (f={self.f}, n={n})")


@dataclass(frozen=True)
class ThreePartition:
    a: NodeSet
    b: NodeSet
    c: NodeSet

    def validate(self, g: Graph, f: int) -> None:
        parts = (self.a, self.b, self.c)
        if any(len(p) > f for p in parts):
            raise InvalidPartitionError("every part must have at most f nodes")
        if not self.a or not self.b:
            raise InvalidPartitionError("parts A and B must be non-empty")
        if self.a & self.b or self.a & self.c or self.b & self.c:
            raise InvalidPartitionError("parts must be disjoint")
        if self.a | self.b | self.c != frozenset(g.node_ids):
            raise InvalidPartitionError("parts must cover every node")

    def to_dict(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("a", "b", "c")}


@dataclass(frozen=True)
class CutPartition:
    a: NodeSet
    b: NodeSet
    c1: NodeSet
    c2: NodeSet

    def validate(self, g: Graph, f: int) -> None:
        parts = (self.a, self.b, self.c1, self.c2)
        if not self.a or not self.b:
            raise InvalidPartitionError("sides A and B must be non-empty")
        if len(self.c1) > f or len(self.c2) > f:
            raise InvalidPartitionError("each half of the cut must have at most f nodes")
        if sum(len(p) for p in parts) != len(frozenset().union(*parts)):
            raise InvalidPartitionError("parts must be disjoint")
        if frozenset().union(*parts) != frozenset(g.node_ids):
            raise InvalidPartitionError("parts must cover every node")
        for u in self.a:
            crossing = g.neighbors(u) & self.b
            if crossing:
                raise InvalidPartitionError(
                    f"edge between A and B: {u}-{min(crossing)}"
                )

    def to_dict(self) -> dict:
        return {k: sorted(getattr(self, k)) for k in ("a", "b", "c1", "c2")}


@dataclass
class FeasibilityReport:
    """Outcome of checking both necessary conditions on a graph."""

    n: int
    f: int
    kappa: int
    enough_nodes: bool
    enough_connectivity: bool
    three_partition: Optional[ThreePartition] = None
    cut_partition: Optional[CutPartition] = None
    notes: List[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.enough_nodes and self.enough_connectivity


def vertex_connectivity(g: Graph) -> int:
    """Minimum vertex removals disconnecting g; n-1 for complete graphs."""
    if g.is_complete():
        return g.n - 1
    return nx.node_connectivity(g.to_networkx())


def find_vertex_cut(g: Graph, k: int) -> Optional[NodeSet]:
    """Return the lexicographically smallest minimum vertex cut if its size is <= k."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if g.is_complete():
        return None
    G = g.to_networkx()
    if not nx.is_connected(G):
        return frozenset()
    kappa = nx.node_connectivity(G)
    if kappa > k:
        return None
    cuts = [tuple(sorted(c)) for c in nx.all_node_cuts(G, k=kappa)]
    return frozenset(min(cuts))


def bipartition_around_cut(g: Graph, cut: Iterable[int]) -> Tuple[NodeSet, NodeSet]:
    """Split g - cut into the component holding the lowest id and the rest."""
    cut = frozenset(cut)
    remainder = g.to_networkx()
    remainder.remove_nodes_from(cut)
    if remainder.number_of_nodes() == 0 or nx.is_connected(remainder):
        raise InvalidPartitionError(f"{sorted(cut)} is not a vertex cut")
    components = sorted(
        (frozenset(c) for c in nx.connected_components(remainder)), key=min
    )
    a = components[0]
    b = frozenset().union(*components[1:])
    return a, b


def split_set(s: Iterable[int], f: int) -> Tuple[NodeSet, NodeSet]:
    """Split s into two parts of size <= f, filling the first part lowest-id-first."""
    ordered = sorted(s)
    if len(ordered) > 2 * f:
        raise InvalidPartitionError(f"cannot split {len(ordered)} nodes into halves of size <= {f}")
    head = min(f, len(ordered))
    return frozenset(ordered[:head]), frozenset(ordered[head:])


def three_partition(g: Graph, f: int) -> ThreePartition:
    if g.n > 3 * f:
        raise ConstructionInapplicable(
            f"n = {g.n} > 3f = {3 * f}: the three-way partition does not exist"
        )
    if not g.n > f >= 1:
        raise ScenarioError(f"three_partition needs n > f >= 1 (n={g.n}, f={f})")
    ids = g.node_ids
    p = ThreePartition(
        a=frozenset(ids[:f]), b=frozenset(ids[f : 2 * f]), c=frozenset(ids[2 * f :])
    )
    p.validate(g, f)
    return p


def cut_partition(g: Graph, f: int) -> Optional[CutPartition]:
    """The partition (A, B, C1, C2) around a cut of size <= 2f, if one exists."""
    cut = find_vertex_cut(g, 2 * f)
    if cut is None:
        return None
    a, b = bipartition_around_cut(g, cut)
    c1, c2 = split_set(cut, f)
    p = CutPartition(a=a, b=b, c1=c1, c2=c2)
    p.validate(g, f)
    return p


def check_feasibility(g: Graph, f: int) -> FeasibilityReport:
    FaultModel(f).check(g.n)
    kappa = vertex_connectivity(g)
    report = FeasibilityReport(
        n=g.n,
        f=f,
        kappa=kappa,
        enough_nodes=g.n >= 3 * f + 1,
        enough_connectivity=kappa >= 2 * f + 1,
    )
    if not report.enough_nodes:
        report.three_partition = three_partition(g, f)
    if not report.enough_connectivity:
        report.cut_partition = cut_partition(g, f)
        if report.cut_partition is None:
            report.notes.append(
                "complete graph: no vertex cut exists, the node-count witness applies"
            )
    logger.debug(
        "Feasibility n=%d f=%d kappa=%d nodes_ok=%s conn_ok=%s",
        g.n, f, kappa, report.enough_nodes, report.enough_connectivity,
    )
    return report


# Text format


def parse_graph(text: str) -> Graph:
    n: Optional[int] = None
    edges: set = set()
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        directive, args = parts[0], parts[1:]
        try:
            values = [int(a) for a in args]
        except ValueError:
            raise GraphFormatError(f"non-integer field in {raw.strip()!r}", line_number)
        if directive == "n":
            if n is not None:
                raise GraphFormatError("repeated 'n' line", line_number)
            if len(values) != 1 or values[0] < 1:
                raise GraphFormatError("'n' expects one positive count", line_number)
            n = values[0]
        elif directive == "e":
            if n is None:
                raise GraphFormatError("'e' before 'n'", line_number)
            if len(values) != 2:
                raise GraphFormatError("'e' expects two node ids", line_number)
            u, v = values
            if u == v:
                raise GraphFormatError(f"self-loop on node {u}", line_number)
            if not (0 <= u < n and 0 <= v < n):
                raise GraphFormatError(f"node id out of range 0..{n - 1}", line_number)
            edge = _norm_edge(u, v)
            if edge in edges:
                raise GraphFormatError(f"duplicate edge {u}-{v}", line_number)
            edges.add(edge)
        else:
            raise GraphFormatError(f"unknown directive {directive!r}", line_number)
    if n is None:
        raise GraphFormatError("missing 'n' line")
    return Graph(n, frozenset(edges))


def load_graph(path: Union[str, Path]) -> Graph:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise GraphFormatError(f"cannot read {path}: {e}")
    return parse_graph(text)


def format_graph(g: Graph) -> str:
    lines = [f"n {g.n}"]
    lines.extend(f"e {u} {v}" for u, v in sorted(g.edges))
    return "\n".join(lines) + "\n"
