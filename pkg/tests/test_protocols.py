import random
from decimal import Decimal
from itertools import combinations

import pytest

from lbforge.conditions import check_conditions
from lbforge.errors import InfeasibleConfiguration, ScenarioError
from lbforge.graph_core import Graph, vertex_connectivity
from lbforge.protocols import (
    EXTREME_VALUE,
    ApproxConsensus,
    ConstantExtreme,
    NaiveAveraging,
    ProtocolConfig,
    RandomInRange,
    RelayLayer,
    ReplayBehavior,
    build_victims,
    byzantine_behavior,
    default_rounds,
    has_disjoint_paths,
    instant_behavior,
    reliable_relay_layer,
    require_feasible,
    shift_relayed_value,
    trimmed_midpoint,
)
from lbforge.sim_engine import (
    Broadcast,
    Decide,
    EventKind,
    Halt,
    RunOutcome,
    StartKind,
    StartMode,
    Topology,
    check_trace_wellformed,
    run,
)
from lbforge.wire import Tag, WireMessage, format_value

from .conftest import make_cfg

WHEEL5 = Graph.from_edges(5, [(0, 1), (0, 2), (0, 3), (0, 4), (1, 2), (2, 3), (3, 4), (1, 4)])


def split_inputs(g: Graph):
    return {u: Decimal(0) if u < g.n // 2 else Decimal(1) for u in g.node_ids}


def simulate(g, victim, inputs, seed, faulty=(), strategy="crash", max_steps=400_000):
    cfg = make_cfg(g)
    factories = build_victims(victim, cfg, g)
    behaviors, modes = {}, {}
    for u in g.node_ids:
        if u in faulty:
            behaviors[u], modes[u] = byzantine_behavior(strategy, cfg, g, u, seed)
        else:
            behaviors[u], modes[u] = factories[u](), StartMode.normal()
    topology = Topology.from_graph(g)
    trace = run(topology, behaviors, inputs, modes, seed, max_steps)
    nonfaulty = [u for u in g.node_ids if u not in faulty]
    return topology, trace, check_conditions(trace, nonfaulty, inputs, cfg)


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ScenarioError):
            ProtocolConfig(Decimal("0.01"), Decimal(1), Decimal(0), 4, 1)
        with pytest.raises(ScenarioError):
            ProtocolConfig(Decimal(2), Decimal(0), Decimal(1), 4, 1)
        with pytest.raises(ScenarioError):
            ProtocolConfig(Decimal("0.01"), Decimal(0), Decimal(1), 4, 4)
        with pytest.raises(ScenarioError):
            ProtocolConfig(Decimal("Infinity"), Decimal(0), Decimal(1), 4, 1)

    def test_dict_round_trip(self, complete4):
        cfg = make_cfg(complete4)
        assert ProtocolConfig.from_dict(cfg.to_dict()) == cfg

    def test_default_rounds(self, complete4):
        assert default_rounds(make_cfg(complete4)) == 8
        assert default_rounds(make_cfg(complete4, epsilon=Decimal("0.5"))) == 2

    def test_trimmed_midpoint(self):
        values = [Decimal(1000), Decimal("0.2"), Decimal(0), Decimal("0.6")]
        assert trimmed_midpoint(values, 1) == Decimal("0.4")
        with pytest.raises(ValueError):
            trimmed_midpoint([Decimal(0), Decimal(1)], 1)

    def test_require_feasible(self, complete3, complete4, diamond, wheel7):
        require_feasible(make_cfg(complete4), complete4)
        require_feasible(make_cfg(wheel7), wheel7)
        for g in (complete3, diamond):
            with pytest.raises(InfeasibleConfiguration):
                require_feasible(make_cfg(g), g)
        with pytest.raises(ScenarioError):
            require_feasible(make_cfg(complete4), wheel7)


class TestRelayLayer:
    def test_disjoint_paths(self):
        sets = [frozenset({1, 2}), frozenset({2, 3}), frozenset({4})]
        assert has_disjoint_paths(sets, 2)
        assert not has_disjoint_paths(sets, 3)
        assert has_disjoint_paths([], 0)

    def test_direct_messages_are_accepted_on_sight(self):
        relay = RelayLayer(WHEEL5, 1, 2)
        message = WireMessage(Tag.VALUE, 1, 1, "0.5")
        accepted, actions = relay.receive(1, message)
        assert accepted == message
        vouch = WireMessage.decode(actions[0].payload)
        assert vouch.tag is Tag.RELAY_VALUE and vouch.path == (2,)
        assert relay.receive(1, message) == (None, [])

    def test_impersonation_is_dropped(self):
        relay = RelayLayer(WHEEL5, 1, 2)
        assert relay.receive(3, WireMessage(Tag.VALUE, 1, 1, "0.5")) == (None, [])

    def test_relayed_value_needs_disjoint_paths(self):
        relay = RelayLayer(WHEEL5, 1, 3)
        first = WireMessage(Tag.RELAY_VALUE, 1, 1, "0.5", (2,))
        accepted, actions = relay.receive(2, first)
        assert accepted is None
        assert WireMessage.decode(actions[0].payload).path == (2, 3)
        forged = WireMessage(Tag.RELAY_VALUE, 1, 1, "9", (4,))
        assert relay.receive(4, forged)[0] is None
        second = WireMessage(Tag.RELAY_VALUE, 1, 1, "0.5", (0,))
        accepted, _ = relay.receive(0, second)
        assert accepted == second
        assert relay.accepted[(Tag.VALUE, 1, 1)] == "0.5"

    def test_complete_graphs_never_relay(self, complete4):
        relay = RelayLayer(complete4, 1, 0)
        accepted, actions = relay.receive(1, WireMessage(Tag.VALUE, 1, 1, "1"))
        assert accepted is not None and actions == []
        assert relay.receive(2, WireMessage(Tag.RELAY_VALUE, 3, 1, "1", (2,))) == (None, [])

    def test_reliable_relay_layer_needs_connectivity(self, diamond):
        with pytest.raises(InfeasibleConfiguration):
            reliable_relay_layer(diamond, 1, 0)
        assert reliable_relay_layer(WHEEL5, 1, 0).enabled


class RelayProbe:
    def __init__(self, g, f, node, mutate=None):
        self.relay = RelayLayer(g, f, node, mutate=mutate)

    def on_init(self, input_value):
        return self.relay.originate(Tag.VALUE, 1, format_value(input_value))

    def on_message(self, sender, payload):
        return self.relay.receive(sender, WireMessage.decode(payload))[1]


class TestReliableBroadcast:
    def run_probes(self, g, seed, faulty=None):
        probes = {
            u: RelayProbe(g, 1, u, shift_relayed_value if u == faulty else None)
            for u in g.node_ids
        }
        inputs = {u: Decimal(u) / 10 for u in g.node_ids}
        modes = {u: StartMode.normal() for u in g.node_ids}
        run(Topology.from_graph(g), probes, inputs, modes, seed, 100_000)
        return probes, inputs

    @pytest.mark.parametrize("seed", range(5))
    def test_every_value_reaches_everyone(self, seed):
        probes, inputs = self.run_probes(WHEEL5, seed)
        for u, probe in probes.items():
            for origin in WHEEL5.node_ids:
                assert probe.relay.accepted[(Tag.VALUE, origin, 1)] == format_value(inputs[origin])

    @pytest.mark.parametrize("faulty", [0, 3])
    def test_mutating_relay_cannot_forge(self, faulty):
        for seed in range(3):
            probes, inputs = self.run_probes(WHEEL5, seed, faulty=faulty)
            for u, probe in probes.items():
                if u == faulty:
                    continue
                for origin in WHEEL5.node_ids:
                    expected = format_value(inputs[origin])
                    assert probe.relay.accepted[(Tag.VALUE, origin, 1)] == expected


class TestApproxConsensus:
    @pytest.mark.parametrize("strategy", [None, "crash", "constant-extreme", "random-in-range"])
    def test_complete4(self, complete4, strategy):
        for seed in range(12):
            faulty = () if strategy is None else (seed % complete4.n,)
            topology, trace, report = simulate(
                complete4, "approx", split_inputs(complete4), seed, faulty, strategy or "crash"
            )
            assert report.ok, (seed, report.summary_lines())
            assert check_trace_wellformed(trace, topology) == []

    @pytest.mark.parametrize(
        "strategy, faulty",
        [(None, ()), ("crash", (4,)), ("constant-extreme", (0,)), ("silent", (2,)),
         ("mutating-relay", (5,))],
    )
    def test_wheel7(self, wheel7, strategy, faulty):
        inputs = {u: Decimal(u % 3) / 2 for u in wheel7.node_ids}
        for seed in range(2):
            _, trace, report = simulate(wheel7, "approx", inputs, seed, faulty, strategy or "crash")
            assert report.ok, (seed, report.summary_lines())

    @pytest.mark.slow
    @pytest.mark.parametrize("strategy", [None, "crash", "constant-extreme"])
    @pytest.mark.parametrize("graph_name", ["complete4", "wheel7"])
    def test_seed_grid(self, request, graph_name, strategy):
        g = request.getfixturevalue(graph_name)
        inputs = split_inputs(g)
        for seed in range(100):
            faulty = () if strategy is None else (seed % g.n,)
            _, _, report = simulate(g, "approx", inputs, seed, faulty, strategy or "crash")
            assert report.ok, (seed, faulty, report.summary_lines())

    @pytest.mark.slow
    @pytest.mark.parametrize("faulty", range(7))
    def test_mutating_relay_on_the_wheel(self, wheel7, faulty):
        inputs = split_inputs(wheel7)
        for seed in range(8):
            _, _, report = simulate(wheel7, "approx", inputs, seed, (faulty,), "mutating-relay")
            assert report.ok, (seed, report.summary_lines())

    @pytest.mark.slow
    def test_mutating_relay_on_sparse_random_graphs(self):
        rng = random.Random(31)
        graphs = []
        while len(graphs) < 6:
            edges = [e for e in combinations(range(7), 2) if rng.random() < 0.5]
            g = Graph.from_edges(7, edges)
            if not g.is_complete() and vertex_connectivity(g) == 3:
                graphs.append(g)
        for g in graphs:
            inputs = split_inputs(g)
            for seed in range(3):
                faulty = (rng.randrange(7),)
                _, _, report = simulate(g, "approx", inputs, seed, faulty, "mutating-relay")
                assert report.ok, (g.edges, seed, faulty, report.summary_lines())

    def test_decided_node_keeps_relaying_until_every_heard_origin_is_done(self, complete4):
        cfg = make_cfg(complete4)
        node = ApproxConsensus(cfg, complete4, 0, rounds=1)
        node.on_init(Decimal(0))
        for origin in (1, 2, 3):
            node.on_message(origin, WireMessage(Tag.VALUE, origin, 1, "0").encode())
        for origin in (1, 2, 3):
            node.on_message(origin, WireMessage(Tag.REPORT, origin, 1, "0,1,2").encode())
        assert node.decision == Decimal(0) and not node.halted
        node.on_message(1, WireMessage(Tag.DONE, 1, 0, "0").encode())
        actions = node.on_message(2, WireMessage(Tag.DONE, 2, 0, "0").encode())
        assert Halt() not in actions and not node.halted
        actions = node.on_message(3, WireMessage(Tag.DONE, 3, 0, "0").encode())
        assert Halt() in actions and node.halted

    def test_unanimous_inputs_are_kept(self, complete4):
        inputs = {u: Decimal("0.3") for u in complete4.node_ids}
        _, _, report = simulate(complete4, "approx", inputs, 4)
        assert set(report.decisions.values()) == {Decimal("0.3")}

    def test_interval_halves_every_round(self, complete4):
        inputs = {0: Decimal(0), 1: Decimal("0.2"), 2: Decimal("0.9"), 3: Decimal(1)}
        for seed in range(20):
            _, trace, report = simulate(complete4, "approx", inputs, seed)
            assert report.ok
            by_round = {}
            for e in trace.events:
                if e.kind is not EventKind.SEND:
                    continue
                message = WireMessage.decode(e.payload)
                if message.tag is Tag.VALUE:
                    by_round.setdefault(message.round, []).append(Decimal(message.value))
            rounds = sorted(by_round)
            assert rounds[0] == 1 and len(rounds) >= 2
            for r in rounds[1:]:
                before = max(by_round[r - 1]) - min(by_round[r - 1])
                after = max(by_round[r]) - min(by_round[r])
                assert after <= before / 2 + Decimal("1e-12"), (seed, r)

    def test_refuses_infeasible_graphs(self, complete3):
        with pytest.raises(InfeasibleConfiguration):
            ApproxConsensus(make_cfg(complete3), complete3, 0)

    def test_malformed_payloads_are_dropped(self, complete4):
        node = ApproxConsensus(make_cfg(complete4), complete4, 0)
        node.on_init(Decimal(0))
        assert node.on_message(1, b"\x00garbage") == []
        bad_value = WireMessage(Tag.VALUE, 1, 1, "NaN").encode()
        assert node.on_message(1, bad_value) == []


class TestVictims:
    def test_naive_is_fine_without_faults(self, complete3):
        inputs = {u: Decimal(1) for u in complete3.node_ids}
        _, trace, report = simulate(complete3, "naive", inputs, 0)
        assert trace.outcome is RunOutcome.COMPLETED
        assert set(report.decisions.values()) == {Decimal(1)}

    def test_naive_round_count(self, complete3):
        node = NaiveAveraging(make_cfg(complete3), complete3, 0, rounds=1)
        actions = node.on_init(Decimal(0))
        assert isinstance(actions[0], Broadcast)
        actions = node.on_message(1, WireMessage(Tag.VALUE, 1, 1, "1").encode())
        assert Decide(Decimal("0.5")) in actions and Halt() in actions

    def test_naive_max(self, complete3):
        node = NaiveAveraging(make_cfg(complete3), complete3, 0, rounds=1, update="max")
        node.on_init(Decimal(0))
        actions = node.on_message(1, WireMessage(Tag.VALUE, 1, 1, "1").encode())
        assert Decide(Decimal(1)) in actions

    def test_instant(self):
        assert instant_behavior().on_init(Decimal("0.7")) == [Decide(Decimal("0.7")), Halt()]

    def test_build_victims(self, complete3):
        cfg = make_cfg(complete3)
        factories = build_victims("naive", cfg, complete3)
        assert sorted(factories) == [0, 1, 2]
        assert factories[0]() is not factories[0]()
        with pytest.raises(ScenarioError):
            build_victims("paxos", cfg, complete3)
        with pytest.raises(InfeasibleConfiguration):
            build_victims("approx", cfg, complete3)


class TestReplay:
    def test_timed_script(self):
        behavior = ReplayBehavior([(3, b"a"), (9, b"b")])
        assert behavior.on_init(Decimal(0)) == [
            Broadcast(b"a", not_before=3),
            Broadcast(b"b", not_before=9),
            Halt(not_before=9),
        ]
        assert behavior.on_message(1, b"x") == []

    def test_untimed_script(self):
        behavior = ReplayBehavior([b"a", b"b"])
        assert behavior.on_init(Decimal(0)) == [Broadcast(b"a")]
        assert behavior.on_message(1, b"x") == [Broadcast(b"b"), Halt()]
        assert behavior.on_message(1, b"x") == []

    def test_empty_and_mixed_scripts(self):
        assert ReplayBehavior([]).on_init(Decimal(0)) == [Halt()]
        with pytest.raises(ValueError):
            ReplayBehavior([b"a", (1, b"b")])


class TestByzantine:
    def test_start_modes(self, complete4):
        cfg = make_cfg(complete4)
        _, mode = byzantine_behavior("crash", cfg, complete4, 3, 0)
        assert mode.kind is StartKind.CRASHED
        behavior, mode = byzantine_behavior("silent", cfg, complete4, 3, 0)
        assert mode.kind is StartKind.NORMAL and behavior.on_init(Decimal(0)) == []
        with pytest.raises(ScenarioError):
            byzantine_behavior("equivocate", cfg, complete4, 3, 0)

    def test_constant_extreme_reports_1000(self, complete4):
        behavior, _ = byzantine_behavior("constant-extreme", make_cfg(complete4), complete4, 3, 0)
        assert isinstance(behavior, ConstantExtreme)
        (action,) = behavior.on_init(Decimal(0))
        assert Decimal(WireMessage.decode(action.payload).value) == EXTREME_VALUE

    def test_random_in_range_is_seeded(self, complete4):
        cfg = make_cfg(complete4)
        first = RandomInRange(cfg, complete4, 3, seed=5, check_feasible=False)
        second = RandomInRange(cfg, complete4, 3, seed=5, check_feasible=False)
        a = [first.round_value(r) for r in range(10)]
        assert a == [second.round_value(r) for r in range(10)]
        assert all(Decimal(-1) <= v <= Decimal(2) for v in a)

    def test_shift_relayed_value(self):
        message = WireMessage(Tag.RELAY_VALUE, 1, 2, "0.5", (3,))
        assert Decimal(shift_relayed_value(message).value) == Decimal("1.5")
        report = WireMessage(Tag.RELAY_REPORT, 1, 2, "0,1,2", (3,))
        assert shift_relayed_value(report) == report
