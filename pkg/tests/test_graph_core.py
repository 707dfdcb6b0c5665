import random
from itertools import combinations

import networkx as nx
import pytest

from lbforge.errors import (
    ConstructionInapplicable,
    GraphFormatError,
    InvalidGraphError,
    InvalidPartitionError,
)
from lbforge.graph_core import (
    CutPartition,
    Graph,
    ThreePartition,
    bipartition_around_cut,
    check_feasibility,
    cut_partition,
    find_vertex_cut,
    format_graph,
    load_graph,
    parse_graph,
    split_set,
    three_partition,
    vertex_connectivity,
)

from .conftest import GRAPH_DIR


def brute_force_connectivity(g: Graph) -> int:
    if g.is_complete():
        return g.n - 1
    G = g.to_networkx()
    for size in range(g.n - 1):
        for cut in combinations(range(g.n), size):
            rest = G.copy()
            rest.remove_nodes_from(cut)
            if not nx.is_connected(rest):
                return size
    return g.n - 1


def all_graphs(n: int):
    pairs = list(combinations(range(n), 2))
    for mask in range(1 << len(pairs)):
        yield Graph.from_edges(n, [p for i, p in enumerate(pairs) if mask >> i & 1])


def random_connected_graph(rng: random.Random, n: int, p: float = 0.5) -> Graph:
    while True:
        edges = [e for e in combinations(range(n), 2) if rng.random() < p]
        g = Graph.from_edges(n, edges)
        if nx.is_connected(g.to_networkx()):
            return g


class TestGraph:
    def test_edges_are_normalised(self):
        g = Graph.from_edges(3, [(2, 0), (1, 2)])
        assert g.edges == frozenset({(0, 2), (1, 2)})
        assert g.has_edge(0, 2) and g.has_edge(2, 0)

    def test_rejects_self_loops_and_out_of_range(self):
        with pytest.raises(InvalidGraphError):
            Graph.from_edges(3, [(1, 1)])
        with pytest.raises(InvalidGraphError):
            Graph.from_edges(3, [(0, 3)])
        with pytest.raises(InvalidGraphError):
            Graph(0)

    def test_complete_and_cycle(self):
        assert Graph.complete(4).is_complete()
        assert not Graph.cycle(4).is_complete()
        assert Graph.cycle(5).neighbors(0) == frozenset({1, 4})
        assert Graph.cycle(4).completed() == Graph.complete(4)


class TestConnectivity:
    def test_known_values(self, complete3, complete4, diamond, wheel7):
        assert vertex_connectivity(complete3) == 2
        assert vertex_connectivity(complete4) == 3
        assert vertex_connectivity(diamond) == 2
        assert vertex_connectivity(wheel7) == 3
        assert vertex_connectivity(Graph.cycle(6)) == 2

    @pytest.mark.parametrize("n", [2, 3, 4, 5, pytest.param(6, marks=pytest.mark.slow)])
    def test_matches_brute_force_exhaustively(self, n):
        for g in all_graphs(n):
            if nx.is_connected(g.to_networkx()):
                assert vertex_connectivity(g) == brute_force_connectivity(g), format_graph(g)

    def test_matches_brute_force_on_random_graphs(self):
        rng = random.Random(2024)
        for _ in range(100):
            g = random_connected_graph(rng, 7)
            assert vertex_connectivity(g) == brute_force_connectivity(g), format_graph(g)

    def test_disconnected_graph(self):
        g = Graph.from_edges(4, [(0, 1), (2, 3)])
        assert vertex_connectivity(g) == 0
        assert find_vertex_cut(g, 2) == frozenset()


class TestCuts:
    def test_diamond_cut(self, diamond):
        assert find_vertex_cut(diamond, 2) == frozenset({2, 3})
        assert find_vertex_cut(diamond, 1) is None

    def test_complete_graph_has_no_cut(self, complete4):
        assert find_vertex_cut(complete4, 5) is None

    def test_cut_is_minimum_and_deterministic(self):
        g = Graph.cycle(6)
        cut = find_vertex_cut(g, 2)
        assert len(cut) == 2
        rest = g.to_networkx()
        rest.remove_nodes_from(cut)
        assert not nx.is_connected(rest)
        assert find_vertex_cut(g, 2) == cut

    def test_bipartition_around_cut(self, diamond):
        assert bipartition_around_cut(diamond, {2, 3}) == (frozenset({0}), frozenset({1}))
        with pytest.raises(InvalidPartitionError):
            bipartition_around_cut(diamond, {2})

    def test_split_set(self):
        assert split_set({5, 1, 3}, 2) == (frozenset({1, 3}), frozenset({5}))
        with pytest.raises(InvalidPartitionError):
            split_set({1, 2, 3}, 1)


class TestPartitions:
    def test_three_partition_is_deterministic(self):
        p = three_partition(Graph.complete(5), 2)
        assert p == ThreePartition(frozenset({0, 1}), frozenset({2, 3}), frozenset({4}))

    def test_three_partition_rejects_large_graphs(self, complete4):
        with pytest.raises(ConstructionInapplicable):
            three_partition(complete4, 1)

    def test_cut_partition_on_diamond(self, diamond):
        p = cut_partition(diamond, 1)
        assert p == CutPartition(
            frozenset({0}), frozenset({1}), frozenset({2}), frozenset({3})
        )

    def test_cut_partition_validation(self, diamond):
        bad = CutPartition(frozenset({0}), frozenset({2}), frozenset({1}), frozenset({3}))
        with pytest.raises(InvalidPartitionError):
            bad.validate(diamond, 1)

    def test_random_instances_yield_valid_partitions(self):
        rng = random.Random(7)
        checked = 0
        for _ in range(60):
            n = rng.randint(4, 8)
            f = rng.randint(1, 2)
            if f >= n:
                continue
            g = random_connected_graph(rng, n, p=0.45)
            p = cut_partition(g, f)
            if p is None:
                continue
            p.validate(g, f)
            assert len(p.c1) <= f and len(p.c2) <= f
            for u in p.a:
                assert not g.neighbors(u) & p.b
            checked += 1
        assert checked > 0


class TestFeasibility:
    def test_feasible(self, complete4):
        report = check_feasibility(complete4, 1)
        assert report.feasible
        assert report.three_partition is None and report.cut_partition is None

    def test_complete3(self, complete3):
        report = check_feasibility(complete3, 1)
        assert not report.enough_nodes
        assert not report.enough_connectivity
        assert report.three_partition is not None
        assert report.cut_partition is None
        assert report.notes

    def test_diamond(self, diamond):
        report = check_feasibility(diamond, 1)
        assert not report.feasible
        assert report.enough_nodes
        assert report.cut_partition.c1 | report.cut_partition.c2 == frozenset({2, 3})


class TestTextFormat:
    def test_round_trip(self, wheel7):
        assert parse_graph(format_graph(wheel7)) == wheel7

    def test_sample_files(self, diamond, wheel7):
        assert load_graph(GRAPH_DIR / "diamond.graph") == diamond
        assert load_graph(GRAPH_DIR / "wheel7.graph") == wheel7
        assert load_graph(GRAPH_DIR / "complete3.graph").is_complete()

    @pytest.mark.parametrize(
        "text, line",
        [
            ("n 3\ne 0 0\n", 2),
            ("n 3\ne 0 1\ne 1 0\n", 3),
            ("n 3\ne 0 5\n", 2),
            ("n 3\nx 0 1\n", 2),
            ("n 3\ne 0\n", 2),
            ("e 0 1\n", 1),
            ("n 3\nn 4\n", 2),
            ("# header\nn 3\ne 0 one\n", 3),
        ],
    )
    def test_errors_carry_line_numbers(self, text, line):
        with pytest.raises(GraphFormatError) as excinfo:
            parse_graph(text)
        assert excinfo.value.line_number == line
        assert str(excinfo.value).startswith(f"line {line}:")

    def test_missing_n_line(self):
        with pytest.raises(GraphFormatError):
            parse_graph("# nothing here\n")

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(GraphFormatError):
            load_graph(tmp_path / "missing.graph")
