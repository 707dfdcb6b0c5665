"""
Counterexample Forge

Runs the two impossibility constructions against a candidate algorithm:

1. Run E1 directly on G with a crash fault set and measure delta, the logical
   time of the last halt.
2. Build the gadget with slow copies activating at delta + 1, lift the victim
   onto it and run it.
3. Re-run the remaining executions directly on G, with the faulty nodes
   replaying what their gadget copy broadcast (at the same logical times).
4. Compare every non-faulty node's local view with its gadget copy and check
   the three conditions on every execution of G.

The verdict is the first concrete condition violation found on G, in
execution order. Each ordered link draws delays from a stream keyed by the
seed and the link's original endpoints, so the gadget run and the runs on G
share their timing wherever the in-neighborhoods agree.
"""

import contextlib
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import (
    Any,
    Callable,
    ContextManager,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Mapping,
    Optional,
    Tuple,
    Union,
)

from .conditions import ConditionReport, check_conditions
from .copies import CopyId, CopyTag, node_to_json
from .errors import ConstructionInapplicable, VictimDidNotTerminate
from .gadget import (
    GadgetGraph,
    build_theorem1_gadget,
    build_theorem2_gadget,
    lift_behaviors,
)
from .graph_core import (
    CutPartition,
    FaultModel,
    Graph,
    ThreePartition,
    cut_partition,
    three_partition,
    vertex_connectivity,
)
from .protocols import CrashBehavior, ProtocolConfig, ReplayBehavior
from .sim_engine import (
    DEFAULT_MAX_DELAY,
    Behavior,
    EventKind,
    RunOutcome,
    StartMode,
    Topology,
    Trace,
    ViewEntry,
    local_view,
    run,
)
from .wire import display_value

logger = logging.getLogger(__name__)

VictimFactories = Mapping[int, Callable[[], Behavior]]
Timer = Callable[[str], ContextManager]

COUPLING_NOTE = (
    "gadget and G executions share per-link delay streams keyed by the seed "
    "and the link's original endpoints"
)


class VerdictKind(Enum):
    VIOLATED_VALIDITY = "ViolatedValidity"
    VIOLATED_AGREEMENT = "ViolatedAgreement"
    VICTIM_DID_NOT_TERMINATE = "VictimDidNotTerminate"
    VICTIM_SURVIVED = "VictimSurvived"


@dataclass
class Verdict:
    kind: VerdictKind
    execution: Optional[str] = None
    witness: Dict[str, Any] = field(default_factory=dict)
    explanation: str = ""

    @property
    def is_violation(self) -> bool:
        return self.kind in (VerdictKind.VIOLATED_VALIDITY, VerdictKind.VIOLATED_AGREEMENT)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "execution": self.execution,
            "witness": self.witness,
            "explanation": self.explanation,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Verdict":
        return cls(
            VerdictKind(data["kind"]),
            data.get("execution"),
            dict(data.get("witness") or {}),
            data.get("explanation", ""),
        )


@dataclass(frozen=True)
class ExecutionSpec:
    name: str
    faulty: FrozenSet[int]
    fault_kind: str  # crash | replay
    inputs: Dict[int, Decimal]
    start_modes: Dict[int, StartMode]
    view_map: Dict[int, CopyId]
    judged: FrozenSet[int]
    horizon: Optional[int] = None

    @property
    def nonfaulty(self) -> List[int]:
        return sorted(self.view_map)


@dataclass(frozen=True)
class Divergence:
    """Outcome of comparing two local views."""

    equal: bool
    index: Optional[int] = None
    byte_offset: Optional[int] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.equal

    def to_dict(self) -> dict:
        return {
            "equal": self.equal,
            "index": self.index,
            "byte_offset": self.byte_offset,
            "detail": self.detail,
        }


@dataclass
class ExecutionResult:
    spec: ExecutionSpec
    trace: Trace
    conditions: ConditionReport
    certificate: Dict[int, Divergence]


@dataclass
class ForgeReport:
    construction: int
    seed: int
    cfg: ProtocolConfig
    graph: Graph
    partition: Union[ThreePartition, CutPartition]
    victim: str
    delta: Optional[int]
    branch: str
    gadget: Optional[GadgetGraph]
    gadget_trace: Optional[Trace]
    executions: List[ExecutionResult]
    verdict: Verdict
    notes: List[str] = field(default_factory=list)

    def execution(self, name: str) -> ExecutionResult:
        for result in self.executions:
            if result.spec.name == name:
                return result
        raise KeyError(name)

    def summary_lines(self) -> List[str]:
        lines = [
            f"construction: {'node count' if self.construction == 1 else 'connectivity'}"
            f" ({self.construction}), branch {self.branch}",
            f"partition: {self.partition.to_dict()}",
            f"delta: {self.delta}",
        ]
        for result in self.executions:
            mismatched = [u for u, d in result.certificate.items() if not d]
            decided = ", ".join(
                f"{u}->{display_value(v)}"
                for u, v in sorted(result.conditions.decisions.items())
            )
            views = f"diverge at {mismatched}" if mismatched else "match"
            spec = result.spec
            lines.append(
                f"{spec.name}: faulty {sorted(spec.faulty)} ({spec.fault_kind}),"
                f" outputs [{decided}], views {views}"
            )
        v = self.verdict
        where = f" in {v.execution}" if v.execution else ""
        lines.append(f"verdict: {v.kind.value}{where}: {v.explanation}")
        return lines


# Views


def check_indistinguishable(
    view_g: List[ViewEntry], view_gadget: List[ViewEntry], horizon: Optional[int] = None
) -> Divergence:
    """Compare two local views entry by entry, senders by original id."""
    if horizon is not None:
        view_g = [e for e in view_g if e.time <= horizon]
        view_gadget = [e for e in view_gadget if e.time <= horizon]
    for index, (x, y) in enumerate(zip(view_g, view_gadget)):
        if x.comparable() == y.comparable():
            continue
        offset = None
        if x.payload is not None and y.payload is not None:
            offset = next(
                (i for i, (a, b) in enumerate(zip(x.payload, y.payload)) if a != b),
                min(len(x.payload), len(y.payload)),
            )
        return Divergence(
            False, index, offset, f"entry {index}: {x.kind} vs {y.kind}"
            + (f", payloads differ at byte {offset}" if offset is not None else "")
        )
    if len(view_g) != len(view_gadget):
        index = min(len(view_g), len(view_gadget))
        return Divergence(
            False, index, None, f"views have {len(view_g)} and {len(view_gadget)} entries"
        )
    return Divergence(True)


def certify(spec: ExecutionSpec, trace: Trace, gadget_trace: Trace) -> Dict[int, Divergence]:
    return {
        u: check_indistinguishable(
            local_view(trace, u), local_view(gadget_trace, copy), spec.horizon
        )
        for u, copy in sorted(spec.view_map.items())
    }


def judge(spec: ExecutionSpec, trace: Trace, cfg: ProtocolConfig) -> ConditionReport:
    return check_conditions(trace, spec.nonfaulty, spec.inputs, cfg, judged=spec.judged)


# Runs on G


def measure_delta(
    g: Graph,
    crash_set: Iterable[int],
    inputs: Mapping[int, Decimal],
    victim: VictimFactories,
    seed: int,
    max_steps: int,
    max_delay: int = DEFAULT_MAX_DELAY,
) -> Tuple[int, Trace]:
    """Run the crash execution on G; delta is the time of its last halt."""
    crash_set = frozenset(crash_set)
    behaviors, modes = {}, {}
    for u in g.node_ids:
        if u in crash_set:
            behaviors[u], modes[u] = CrashBehavior(), StartMode.crashed()
        else:
            behaviors[u], modes[u] = victim[u](), StartMode.normal()
    trace = run(Topology.from_graph(g), behaviors, inputs, modes, seed, max_steps, max_delay)
    if not trace.completed:
        live = sorted(set(g.node_ids) - crash_set - trace.halted())
        raise VictimDidNotTerminate(
            f"crash execution ended {trace.outcome.value}; nodes {live} never halted", trace
        )
    delta = trace.last_halt_time()
    logger.debug("Measured delta=%d over %d events", delta, len(trace.events))
    return delta, trace


def run_script_extraction(
    gadget_trace: Trace, copies: Iterable[CopyId]
) -> Dict[int, List[Tuple[int, bytes]]]:
    """Timed broadcast script of each designated copy, keyed by its original."""
    copies = list(copies)
    originals = [c.original for c in copies]
    if len(set(originals)) != len(originals):
        raise ValueError("designated copies must have distinct originals")
    scripts: Dict[int, List[Tuple[int, bytes]]] = {u: [] for u in originals}
    wanted = {c: c.original for c in copies}
    for event in gadget_trace.events:
        if event.kind is EventKind.SEND and event.sender in wanted:
            scripts[wanted[event.sender]].append((event.time, event.payload))
    return scripts


def _run_on_g(
    g: Graph,
    spec: ExecutionSpec,
    victim: VictimFactories,
    scripts: Mapping[int, List[Tuple[int, bytes]]],
    seed: int,
    max_steps: int,
    max_delay: int,
) -> Trace:
    behaviors: Dict[int, Behavior] = {}
    for u in g.node_ids:
        if u not in spec.faulty:
            behaviors[u] = victim[u]()
        elif spec.fault_kind == "replay":
            behaviors[u] = ReplayBehavior(scripts[u])
        else:
            behaviors[u] = CrashBehavior()
    topology = Topology.from_graph(g)
    return run(topology, behaviors, spec.inputs, spec.start_modes, seed, max_steps, max_delay)


def _run_gadget(
    gg: GadgetGraph, victim: VictimFactories, seed: int, max_steps: int, max_delay: int
) -> Trace:
    behaviors = lift_behaviors(gg, victim)
    return run(gg.topology, behaviors, gg.inputs, gg.start_modes, seed, max_steps, max_delay)


def _evaluate(
    spec: ExecutionSpec, trace: Trace, gadget_trace: Trace, cfg: ProtocolConfig
) -> ExecutionResult:
    return ExecutionResult(spec, trace, judge(spec, trace, cfg), certify(spec, trace, gadget_trace))


def _crash_modes(g: Graph, crashed: FrozenSet[int]) -> Dict[int, StartMode]:
    return {u: StartMode.crashed() if u in crashed else StartMode.normal() for u in g.node_ids}


# Verdicts


def _verdict_from_conditions(name: str, report: ConditionReport) -> Optional[Verdict]:
    lo, hi = report.hull
    if not report.validity:
        node = report.validity_witness
        value = report.decisions[node]
        bound = display_value(lo if value < lo else hi)
        output, lo, hi = display_value(value), display_value(lo), display_value(hi)
        return Verdict(
            VerdictKind.VIOLATED_VALIDITY,
            name,
            {
                "node": node_to_json(node),
                "output": output,
                "lower": lo,
                "upper": hi,
                "bound": bound,
            },
            f"node {node} output {output} lies outside the non-faulty input range [{lo}, {hi}]",
        )
    if not report.agreement:
        u, v = report.agreement_witness
        du, dv = report.decisions[u], report.decisions[v]
        difference = display_value(abs(du - dv))
        du, dv = display_value(du), display_value(dv)
        return Verdict(
            VerdictKind.VIOLATED_AGREEMENT,
            name,
            {
                "outputs": {str(node_to_json(u)): du, str(node_to_json(v)): dv},
                "difference": difference,
            },
            f"node {u} output {du} and node {v} output {dv} differ by more than epsilon",
        )
    if not report.termination:
        nodes = [node_to_json(u) for u in report.unterminated]
        return Verdict(
            VerdictKind.VICTIM_DID_NOT_TERMINATE,
            name,
            {"nodes": nodes},
            f"non-faulty node(s) {nodes} never decided and halted",
        )
    return None


def decide_verdict(
    executions: List[ExecutionResult],
    gadget_outcome: Optional[RunOutcome],
    construction: int,
    cfg: ProtocolConfig,
) -> Verdict:
    """First violation on G in execution order, otherwise why the victim survived."""
    for result in executions:
        name = result.spec.name
        if name == "E1" and not result.trace.completed:
            return Verdict(
                VerdictKind.VICTIM_DID_NOT_TERMINATE,
                name,
                {"outcome": result.trace.outcome.value},
                f"the crash execution ended {result.trace.outcome.value}",
            )
        verdict = _verdict_from_conditions(name, result.conditions)
        if verdict is not None:
            return verdict
        if name == "E1" and gadget_outcome is RunOutcome.STEP_LIMIT:
            return Verdict(
                VerdictKind.VICTIM_DID_NOT_TERMINATE,
                "gadget",
                {"outcome": gadget_outcome.value},
                "the gadget execution hit the step limit",
            )

    for result in executions:
        for u, divergence in result.certificate.items():
            if not divergence:
                return Verdict(
                    VerdictKind.VICTIM_SURVIVED,
                    result.spec.name,
                    {"node": u, **divergence.to_dict()},
                    f"view of node {u} in {result.spec.name} diverged from its gadget copy "
                    f"({divergence.detail}); this construction with this seed found no violation",
                )
    link = _failed_chain_link(executions, construction, cfg)
    return Verdict(
        VerdictKind.VICTIM_SURVIVED,
        None,
        {"failed_link": link},
        f"{link}; this construction with this seed found no violation",
    )


def _failed_chain_link(
    executions: List[ExecutionResult], construction: int, cfg: ProtocolConfig
) -> str:
    forced = {"E2": cfg.lower, "E3": cfg.upper}
    if construction == 1:
        forced = {"E2": None}
    for result in executions:
        if result.spec.name not in forced:
            continue
        target = forced[result.spec.name]
        outputs = result.conditions.decisions
        if target is not None and any(v != target for v in outputs.values()):
            return f"{result.spec.name} outputs are not all {target}"
    return "every checked execution satisfied all conditions"


# Constructions


def _noop_timer(name: str) -> ContextManager:
    return contextlib.nullcontext()


def _crash_report(
    construction, seed, cfg, g, p, victim_name, spec, error: VictimDidNotTerminate, notes
) -> ForgeReport:
    trace: Trace = error.trace
    conditions = judge(spec, trace, cfg)
    e1 = ExecutionResult(spec, trace, conditions, {})
    verdict = decide_verdict([e1], None, construction, cfg)
    return ForgeReport(
        construction, seed, cfg, g, p, victim_name, None, "none", None, None, [e1], verdict, notes
    )


def verify_theorem1(
    g: Graph,
    f: int,
    cfg: ProtocolConfig,
    victim: VictimFactories,
    seed: int,
    max_steps: int,
    max_delay: int = DEFAULT_MAX_DELAY,
    mirror_auto: bool = True,
    victim_name: str = "custom",
    timer: Timer = _noop_timer,
) -> ForgeReport:
    """The node-count construction: n <= 3f."""
    FaultModel(f).check(g.n)
    if g.n > 3 * f:
        raise ConstructionInapplicable(
            f"n = {g.n} > 3f = {3 * f}: the node-count construction does not apply"
        )
    notes = [COUPLING_NOTE]
    if not g.is_complete():
        notes.append("source graph completed for the node-count construction")
        g = g.completed()
    p = three_partition(g, f)
    ab = p.a | p.b
    lower, upper = cfg.lower, cfg.upper

    e1_inputs = {u: lower if u in p.a else upper for u in g.node_ids}
    e1_spec_partial = dict(
        name="E1",
        faulty=p.c,
        fault_kind="crash",
        inputs=e1_inputs,
        start_modes=_crash_modes(g, p.c),
        view_map={u: CopyId(u, CopyTag.SOLE) for u in ab},
        judged=ab,
    )
    with timer("measure_delta"):
        try:
            delta, e1_trace = measure_delta(g, p.c, e1_inputs, victim, seed, max_steps, max_delay)
        except VictimDidNotTerminate as e:
            spec = ExecutionSpec(**e1_spec_partial)
            return _crash_report(1, seed, cfg, g, p, victim_name, spec, e, notes)
    e1_spec = ExecutionSpec(**e1_spec_partial, horizon=delta)
    e1_conditions = judge(e1_spec, e1_trace, cfg)

    outputs = [e1_conditions.decisions.get(u) for u in sorted(ab)]
    # E2 judges B in the base branch, so only B deciding U rules it out
    mirror = mirror_auto and all(e1_conditions.decisions.get(u) == upper for u in p.b)
    branch = "mirror" if mirror else "base"
    logger.debug("E1 outputs %s; taking the %s branch", outputs, branch)

    slow = delta + 1
    gg = build_theorem1_gadget(g, p, cfg, slow, mirror=mirror)
    with timer("gadget_run"):
        gadget_trace = _run_gadget(gg, victim, seed, max_steps, max_delay)
    e1 = ExecutionResult(e1_spec, e1_trace, e1_conditions, certify(e1_spec, e1_trace, gadget_trace))
    executions = [e1]

    if gadget_trace.outcome is not RunOutcome.STEP_LIMIT:
        faulty, honest_side = (p.b, p.a) if mirror else (p.a, p.b)
        view_map = {u: CopyId(u, CopyTag.SOLE) for u in honest_side}
        view_map.update({u: CopyId(u, CopyTag.SLOW) for u in p.c})
        inputs = {u: gg.inputs[view_map.get(u, CopyId(u, CopyTag.SOLE))] for u in g.node_ids}
        e2_spec = ExecutionSpec(
            name="E2",
            faulty=faulty,
            fault_kind="replay",
            inputs=inputs,
            start_modes={
                u: StartMode.delayed_until(slow) if u in p.c else StartMode.normal()
                for u in g.node_ids
            },
            view_map=view_map,
            judged=honest_side,
        )
        scripts = run_script_extraction(gadget_trace, [CopyId(u, CopyTag.SOLE) for u in faulty])
        with timer("replay_E2"):
            e2_trace = _run_on_g(g, e2_spec, victim, scripts, seed, max_steps, max_delay)
        executions.append(_evaluate(e2_spec, e2_trace, gadget_trace, cfg))

    verdict = decide_verdict(executions, gadget_trace.outcome, 1, cfg)
    logger.info("Node-count construction verdict: %s", verdict.kind.value)
    return ForgeReport(
        1, seed, cfg, g, p, victim_name, delta, branch, gg, gadget_trace, executions, verdict, notes
    )


def verify_theorem2(
    g: Graph,
    f: int,
    cfg: ProtocolConfig,
    victim: VictimFactories,
    seed: int,
    max_steps: int,
    max_delay: int = DEFAULT_MAX_DELAY,
    victim_name: str = "custom",
    timer: Timer = _noop_timer,
) -> ForgeReport:
    """The connectivity construction: a vertex cut of size <= 2f."""
    FaultModel(f).check(g.n)
    kappa = vertex_connectivity(g)
    if kappa >= 2 * f + 1:
        raise ConstructionInapplicable(
            f"connectivity {kappa} >= 2f+1 = {2 * f + 1}:"
            " the connectivity construction does not apply"
        )
    p = cut_partition(g, f)
    if p is None:
        raise ConstructionInapplicable(
            "complete graph: no vertex cut exists, use the node-count construction"
        )
    notes = [COUPLING_NOTE]
    lower, upper = cfg.lower, cfg.upper
    lo, hi, sole = CopyTag.LO, CopyTag.HI, CopyTag.SOLE

    e1_inputs = {u: lower if u in p.a else upper for u in g.node_ids}
    e1_view = {u: CopyId(u, lo) for u in p.a}
    e1_view.update({u: CopyId(u, hi) for u in p.b})
    e1_view.update({u: CopyId(u, sole) for u in p.c2})
    e1_spec_partial = dict(
        name="E1",
        faulty=p.c1,
        fault_kind="crash",
        inputs=e1_inputs,
        start_modes=_crash_modes(g, p.c1),
        view_map=e1_view,
        judged=frozenset(e1_view),
    )
    with timer("measure_delta"):
        try:
            delta, e1_trace = measure_delta(g, p.c1, e1_inputs, victim, seed, max_steps, max_delay)
        except VictimDidNotTerminate as e:
            spec = ExecutionSpec(**e1_spec_partial)
            return _crash_report(2, seed, cfg, g, p, victim_name, spec, e, notes)
    e1_spec = ExecutionSpec(**e1_spec_partial, horizon=delta)

    slow = delta + 1
    gg = build_theorem2_gadget(g, p, cfg, slow)
    with timer("gadget_run"):
        gadget_trace = _run_gadget(gg, victim, seed, max_steps, max_delay)
    executions = [_evaluate(e1_spec, e1_trace, gadget_trace, cfg)]

    if gadget_trace.outcome is not RunOutcome.STEP_LIMIT:
        scripts = run_script_extraction(gadget_trace, [CopyId(u, sole) for u in p.c2])
        honest = p.a | p.b | p.c1
        for name, value, tag in (("E2", lower, lo), ("E3", upper, hi)):
            spec = ExecutionSpec(
                name=name,
                faulty=p.c2,
                fault_kind="replay",
                inputs={u: value for u in g.node_ids},
                start_modes={
                    u: StartMode.delayed_until(slow) if u in p.c1 else StartMode.normal()
                    for u in g.node_ids
                },
                view_map={u: CopyId(u, tag) for u in honest},
                judged=honest,
            )
            with timer(f"replay_{name}"):
                trace = _run_on_g(g, spec, victim, scripts, seed, max_steps, max_delay)
            executions.append(_evaluate(spec, trace, gadget_trace, cfg))

    verdict = decide_verdict(executions, gadget_trace.outcome, 2, cfg)
    logger.info("Connectivity construction verdict: %s", verdict.kind.value)
    return ForgeReport(
        2, seed, cfg, g, p, victim_name, delta, "cut", gg, gadget_trace, executions, verdict, notes
    )


def run_forge(
    theorem: int,
    g: Graph,
    f: int,
    cfg: ProtocolConfig,
    victim: VictimFactories,
    seed: int,
    max_steps: int,
    **kwargs: Any,
) -> ForgeReport:
    if theorem == 1:
        return verify_theorem1(g, f, cfg, victim, seed, max_steps, **kwargs)
    if theorem == 2:
        kwargs.pop("mirror_auto", None)
        return verify_theorem2(g, f, cfg, victim, seed, max_steps, **kwargs)
    raise ValueError(f"theorem must be 1 or 2, got {theorem}")
