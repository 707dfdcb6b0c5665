"""
Deterministic asynchronous execution engine for the local-broadcast model.

Each broadcast reaches every out-neighbor with a bit-identical payload. Links
are FIFO. Delays are drawn per link from a seeded PCG64 stream keyed by
(seed, sender original, receiver original), so a node's local view depends
only on its own incoming links and the behavior of its in-neighbors. Two
topologies that share a sub-network with the same in-neighborhoods replay the
same timed sub-execution; the forge relies on this to couple runs on G and on
the gadget network.

Time is logical. Every trace event carries the global event ordinal (`step`)
and the logical time at which it happened (`time`).
"""

import hashlib
import heapq
import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import (
    Dict,
    FrozenSet,
    Hashable,
    Iterable,
    List,
    Mapping,
    Optional,
    Protocol,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .copies import node_from_json, node_key, node_to_json, original_of
from .errors import MissingBehaviorError, UnknownNodeError
from .graph_core import Graph

logger = logging.getLogger(__name__)

DEFAULT_MAX_DELAY = 8
_DELAY_BLOCK = 64


# Actions


@dataclass(frozen=True)
class Broadcast:
    payload: bytes
    not_before: Optional[int] = None


@dataclass(frozen=True)
class Decide:
    value: Decimal


@dataclass(frozen=True)
class Halt:
    not_before: Optional[int] = None


Action = Union[Broadcast, Decide, Halt]


class Behavior(Protocol):
    """Per-node deterministic state machine."""

    def on_init(self, input_value: Decimal) -> List[Action]:
        ...

    def on_message(self, sender: int, payload: bytes) -> List[Action]:
        ...


class StartKind(Enum):
    NORMAL = "normal"
    CRASHED = "crashed"
    DELAYED = "delayed"


@dataclass(frozen=True)
class StartMode:
    kind: StartKind = StartKind.NORMAL
    until: int = 0

    @classmethod
    def normal(cls) -> "StartMode":
        return cls(StartKind.NORMAL)

    @classmethod
    def crashed(cls) -> "StartMode":
        return cls(StartKind.CRASHED)

    @classmethod
    def delayed_until(cls, time: int) -> "StartMode":
        if time < 0:
            raise ValueError("activation time must be non-negative")
        return cls(StartKind.DELAYED, time)

    @property
    def activation_time(self) -> Optional[int]:
        if self.kind is StartKind.CRASHED:
            return None
        return self.until if self.kind is StartKind.DELAYED else 0

    def __str__(self) -> str:
        if self.kind is StartKind.DELAYED:
            return f"delayed:{self.until}"
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> "StartMode":
        if text.startswith("delayed:"):
            return cls.delayed_until(int(text.split(":", 1)[1]))
        return cls(StartKind(text))


# Topology


@dataclass(frozen=True)
class Topology:
    """Copies joined by undirected and directed edges."""

    copies: Tuple[Hashable, ...]
    undirected: FrozenSet[Tuple[Hashable, Hashable]] = frozenset()
    directed: FrozenSet[Tuple[Hashable, Hashable]] = frozenset()
    _out: Dict[Hashable, Tuple[Hashable, ...]] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )
    _in: Dict[Hashable, Tuple[Hashable, ...]] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )

    def __post_init__(self):
        copies = tuple(sorted(set(self.copies), key=node_key))
        object.__setattr__(self, "copies", copies)
        known = set(copies)
        undirected = set()
        for u, v in self.undirected:
            if u == v:
                raise ValueError(f"self-loop on {u}")
            undirected.add(tuple(sorted((u, v), key=node_key)))
        for u, v in self.directed:
            if u == v:
                raise ValueError(f"self-loop on {u}")
            if tuple(sorted((u, v), key=node_key)) in undirected:
                raise ValueError(f"pair {u},{v} is both directed and undirected")
        object.__setattr__(self, "undirected", frozenset(undirected))
        out: Dict[Hashable, set] = {c: set() for c in copies}
        inn: Dict[Hashable, set] = {c: set() for c in copies}
        for u, v in undirected:
            for x in (u, v):
                if x not in known:
                    raise UnknownNodeError(f"edge endpoint {x} is not a copy")
            out[u].add(v)
            out[v].add(u)
            inn[u].add(v)
            inn[v].add(u)
        for u, v in self.directed:
            for x in (u, v):
                if x not in known:
                    raise UnknownNodeError(f"edge endpoint {x} is not a copy")
            out[u].add(v)
            inn[v].add(u)
        self._out.update({c: tuple(sorted(s, key=node_key)) for c, s in out.items()})
        self._in.update({c: tuple(sorted(s, key=node_key)) for c, s in inn.items()})

    @classmethod
    def from_graph(cls, g: Graph) -> "Topology":
        return cls(copies=g.node_ids, undirected=frozenset(g.edges))

    def out_neighbors(self, u: Hashable) -> Tuple[Hashable, ...]:
        try:
            return self._out[u]
        except KeyError:
            raise UnknownNodeError(f"unknown copy {u}")

    def in_neighbors(self, u: Hashable) -> Tuple[Hashable, ...]:
        try:
            return self._in[u]
        except KeyError:
            raise UnknownNodeError(f"unknown copy {u}")


def out_neighbors(topology: Topology, u: Hashable) -> FrozenSet[Hashable]:
    return frozenset(topology.out_neighbors(u))


# Traces


class EventKind(Enum):
    SEND = "send"
    DELIVER = "deliver"
    DECIDE = "decide"
    HALT = "halt"
    ACTIVATE = "activate"


class RunOutcome(Enum):
    COMPLETED = "completed"  # every non-crashed node halted
    STALLED = "stalled"  # nothing left to deliver, live nodes remain
    STEP_LIMIT = "step_limit"


@dataclass(frozen=True)
class TraceEvent:
    step: int
    time: int
    kind: EventKind
    sender: Hashable
    receiver: Optional[Hashable] = None
    payload: Optional[bytes] = None
    value: Optional[Decimal] = None

    def to_json(self) -> str:
        record = {
            "step": self.step,
            "time": self.time,
            "kind": self.kind.value,
            "sender": node_to_json(self.sender),
            "receiver": None if self.receiver is None else node_to_json(self.receiver),
            "payload": None if self.payload is None else self.payload.hex(),
            "value": None if self.value is None else str(self.value),
        }
        return json.dumps(record, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        record = json.loads(line)
        return cls(
            step=int(record["step"]),
            time=int(record["time"]),
            kind=EventKind(record["kind"]),
            sender=node_from_json(record["sender"]),
            receiver=(
                None if record["receiver"] is None else node_from_json(record["receiver"])
            ),
            payload=None if record["payload"] is None else bytes.fromhex(record["payload"]),
            value=None if record["value"] is None else Decimal(record["value"]),
        )


@dataclass(frozen=True)
class Trace:
    events: Tuple[TraceEvent, ...]
    nodes: Tuple[Hashable, ...]
    outcome: RunOutcome = RunOutcome.COMPLETED

    @property
    def completed(self) -> bool:
        return self.outcome is RunOutcome.COMPLETED

    def to_jsonl(self) -> str:
        return "".join(e.to_json() + "\n" for e in self.events)

    @classmethod
    def from_jsonl(
        cls,
        text: str,
        nodes: Sequence[Hashable],
        outcome: RunOutcome = RunOutcome.COMPLETED,
    ) -> "Trace":
        events = tuple(
            TraceEvent.from_json(line) for line in text.splitlines() if line.strip()
        )
        return cls(events=events, nodes=tuple(nodes), outcome=outcome)

    def halted(self) -> FrozenSet[Hashable]:
        return frozenset(e.sender for e in self.events if e.kind is EventKind.HALT)

    def last_halt_time(self) -> int:
        times = [e.time for e in self.events if e.kind is EventKind.HALT]
        return max(times, default=0)


def write_trace(trace: Trace, path: Union[str, Path]) -> None:
    Path(path).write_text(trace.to_jsonl(), encoding="utf-8")


def read_trace(
    path: Union[str, Path],
    nodes: Sequence[Hashable],
    outcome: RunOutcome = RunOutcome.COMPLETED,
) -> Trace:
    return Trace.from_jsonl(Path(path).read_text(encoding="utf-8"), nodes, outcome)


# Engine


class _LinkStream:
    """Per-link PCG64 delay stream and FIFO bookkeeping."""

    def __init__(self, seed: int, sender: int, receiver: int, max_delay: int):
        digest = hashlib.sha256(f"{seed}:{sender}:{receiver}".encode()).digest()
        self._rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "big")))
        self._max_delay = max_delay
        self._block: List[int] = []
        self._pos = 0
        self.last_arrival = 0
        self.sequence = 0

    def next_delay(self) -> int:
        if self._pos == len(self._block):
            self._block = self._rng.integers(
                1, self._max_delay + 1, size=_DELAY_BLOCK
            ).tolist()
            self._pos = 0
        delay = self._block[self._pos]
        self._pos += 1
        return delay


_ACTIVATE, _EMIT, _DELIVER = 0, 1, 2


class Simulator:
    """One execution: a deterministic event loop over a topology."""

    def __init__(
        self,
        topology: Topology,
        behaviors: Mapping[Hashable, Behavior],
        inputs: Mapping[Hashable, Decimal],
        start_modes: Mapping[Hashable, StartMode],
        seed: int,
        max_steps: int,
        max_delay: int = DEFAULT_MAX_DELAY,
    ):
        if max_steps <= 0:
            raise ValueError("max_steps must be positive")
        if max_delay < 1:
            raise ValueError("max_delay must be at least 1")
        for name, mapping in (
            ("behavior", behaviors),
            ("input", inputs),
            ("start mode", start_modes),
        ):
            missing = [c for c in topology.copies if c not in mapping]
            if missing:
                raise MissingBehaviorError(
                    f"no {name} for {', '.join(str(c) for c in missing)}"
                )
        self.topology = topology
        self.behaviors = behaviors
        self.inputs = inputs
        self.start_modes = start_modes
        self.seed = seed
        self.max_steps = max_steps
        self.max_delay = max_delay

        self._events: List[TraceEvent] = []
        self._queue: List[tuple] = []
        self._counter = 0
        self._links: Dict[Tuple[Hashable, Hashable], _LinkStream] = {}
        self._activation: Dict[Hashable, Optional[int]] = {
            c: start_modes[c].activation_time for c in topology.copies
        }
        self._halted: set = set()
        self._decided: set = set()

    def _push(self, time: int, phase: int, node: Hashable, order: tuple, item: tuple):
        self._counter += 1
        heapq.heappush(
            self._queue, (time, phase, node_key(node), order, self._counter, item)
        )

    def _record(self, time: int, kind: EventKind, sender, receiver=None, payload=None, value=None):
        self._events.append(
            TraceEvent(len(self._events), time, kind, sender, receiver, payload, value)
        )

    def _link(self, sender: Hashable, receiver: Hashable) -> _LinkStream:
        link = self._links.get((sender, receiver))
        if link is None:
            link = _LinkStream(
                self.seed, original_of(sender), original_of(receiver), self.max_delay
            )
            self._links[(sender, receiver)] = link
        return link

    def _send(self, node: Hashable, payload: bytes, time: int) -> None:
        self._record(time, EventKind.SEND, node, payload=payload)
        for receiver in self.topology.out_neighbors(node):
            link = self._link(node, receiver)
            arrival = max(time + link.next_delay(), link.last_arrival)
            link.last_arrival = arrival
            link.sequence += 1
            activation = self._activation[receiver]
            if activation is None or receiver in self._halted:
                continue
            self._push(
                max(arrival, activation),
                _DELIVER,
                receiver,
                (arrival, node_key(node), link.sequence),
                (node, receiver, payload),
            )

    def _apply(self, node: Hashable, actions: Iterable[Action], time: int) -> None:
        for action in actions:
            if node in self._halted:
                logger.debug("Ignoring %r from halted node %s", action, node)
                return
            deferred = getattr(action, "not_before", None)
            if deferred is not None and deferred > time:
                self._push(deferred, _EMIT, node, (self._counter,), (node, action))
                continue
            if isinstance(action, Broadcast):
                self._send(node, bytes(action.payload), time)
            elif isinstance(action, Decide):
                value = Decimal(action.value)
                if not value.is_finite():
                    raise ValueError(f"node {node} decided a non-finite value")
                if node in self._decided:
                    logger.debug("Node %s decided twice; keeping the first value", node)
                    continue
                self._decided.add(node)
                self._record(time, EventKind.DECIDE, node, value=value)
            elif isinstance(action, Halt):
                self._record(time, EventKind.HALT, node)
                self._halted.add(node)
            else:
                raise TypeError(f"unknown action {action!r}")

    def _live(self) -> List[Hashable]:
        return [
            c
            for c in self.topology.copies
            if self._activation[c] is not None and c not in self._halted
        ]

    def run(self) -> Trace:
        for copy in self.topology.copies:
            activation = self._activation[copy]
            if activation is not None:
                self._push(activation, _ACTIVATE, copy, (), (copy,))

        outcome = None
        while self._queue:
            if not self._live():
                break
            if len(self._events) >= self.max_steps:
                outcome = RunOutcome.STEP_LIMIT
                break
            time, phase, _, _, _, item = heapq.heappop(self._queue)
            if phase == _ACTIVATE:
                (copy,) = item
                value = Decimal(self.inputs[copy])
                self._record(time, EventKind.ACTIVATE, copy, value=value)
                self._apply(copy, self.behaviors[copy].on_init(value), time)
            elif phase == _EMIT:
                copy, action = item
                if copy not in self._halted:
                    self._apply(copy, [action], time)
            else:
                sender, receiver, payload = item
                if receiver in self._halted:
                    continue
                self._record(time, EventKind.DELIVER, sender, receiver, payload)
                actions = self.behaviors[receiver].on_message(original_of(sender), payload)
                self._apply(receiver, actions, time)

        if outcome is None:
            outcome = RunOutcome.STALLED if self._live() else RunOutcome.COMPLETED
        logger.debug(
            "Run finished: seed=%s events=%d outcome=%s",
            self.seed, len(self._events), outcome.value,
        )
        return Trace(tuple(self._events), self.topology.copies, outcome)


def run(
    topology: Topology,
    behaviors: Mapping[Hashable, Behavior],
    inputs: Mapping[Hashable, Decimal],
    start_modes: Mapping[Hashable, StartMode],
    seed: int,
    max_steps: int,
    max_delay: int = DEFAULT_MAX_DELAY,
) -> Trace:
    return Simulator(
        topology, behaviors, inputs, start_modes, seed, max_steps, max_delay
    ).run()


# Views and checks


@dataclass(frozen=True)
class ViewEntry:
    kind: str  # input | recv | decide | halt
    time: int
    sender: Optional[int] = None
    payload: Optional[bytes] = None
    value: Optional[Decimal] = None

    def comparable(self) -> tuple:
        return (self.kind, self.sender, self.payload, self.value)


def local_view(trace: Trace, node: Hashable) -> List[ViewEntry]:
    """Input, received messages in delivery order, and own decide/halt."""
    if node not in trace.nodes:
        raise UnknownNodeError(f"{node} does not appear in the trace")
    view: List[ViewEntry] = []
    for e in trace.events:
        if e.kind is EventKind.DELIVER and e.receiver == node:
            view.append(ViewEntry("recv", e.time, original_of(e.sender), e.payload))
        elif e.sender == node:
            if e.kind is EventKind.ACTIVATE:
                view.append(ViewEntry("input", e.time, value=e.value))
            elif e.kind is EventKind.DECIDE:
                view.append(ViewEntry("decide", e.time, value=e.value))
            elif e.kind is EventKind.HALT:
                view.append(ViewEntry("halt", e.time))
    return view


@dataclass(frozen=True)
class TraceViolation:
    kind: str
    message: str
    step: Optional[int] = None


def check_trace_wellformed(trace: Trace, topology: Topology) -> List[TraceViolation]:
    violations: List[TraceViolation] = []
    sends: Dict[Hashable, List[TraceEvent]] = {}
    delivered: Dict[Tuple[Hashable, Hashable], List[TraceEvent]] = {}
    activated: Dict[Hashable, int] = {}
    halted_at: Dict[Hashable, int] = {}
    known = set(topology.copies)

    def actor_check(node, e: TraceEvent) -> None:
        if node not in known:
            violations.append(
                TraceViolation("unknown-node", f"{node} is not in the topology", e.step)
            )
        elif node in halted_at:
            violations.append(
                TraceViolation("halted-silence", f"{node} active after halting", e.step)
            )
        elif node not in activated and e.kind is not EventKind.ACTIVATE:
            violations.append(
                TraceViolation("inactive-node", f"{node} acts before activation", e.step)
            )

    last_step = -1
    for e in trace.events:
        if e.step <= last_step:
            violations.append(TraceViolation("order", "steps are not increasing", e.step))
        last_step = e.step
        if e.kind is EventKind.DELIVER:
            actor_check(e.receiver, e)
            link = (e.sender, e.receiver)
            queue = delivered.setdefault(link, [])
            index = len(queue)
            queue.append(e)
            if e.sender not in known or e.receiver not in topology.out_neighbors(e.sender):
                violations.append(
                    TraceViolation("no-link", f"no link {e.sender}->{e.receiver}", e.step)
                )
                continue
            sent = sends.get(e.sender, [])
            if index >= len(sent):
                violations.append(
                    TraceViolation(
                        "duplicate-or-unsent",
                        f"delivery {index + 1} on {e.sender}->{e.receiver} has no matching send",
                        e.step,
                    )
                )
            elif sent[index].payload != e.payload:
                violations.append(
                    TraceViolation(
                        "fifo",
                        f"delivery {index + 1} on {e.sender}->{e.receiver}"
                        " does not match send order",
                        e.step,
                    )
                )
            continue

        actor_check(e.sender, e)
        if e.kind is EventKind.ACTIVATE:
            if e.sender in activated:
                violations.append(
                    TraceViolation("activation", f"{e.sender} activated twice", e.step)
                )
            activated[e.sender] = e.step
        elif e.kind is EventKind.SEND:
            sends.setdefault(e.sender, []).append(e)
        elif e.kind is EventKind.HALT:
            halted_at[e.sender] = e.step
        elif e.kind is EventKind.DECIDE:
            if e.value is None or not e.value.is_finite():
                violations.append(
                    TraceViolation("decide", f"{e.sender} decided a non-finite value", e.step)
                )

    if trace.outcome is not RunOutcome.STEP_LIMIT:
        for sender, sent in sends.items():
            if sender not in known:
                continue
            for receiver in topology.out_neighbors(sender):
                if receiver not in activated or receiver in halted_at:
                    continue
                got = len(delivered.get((sender, receiver), []))
                if got < len(sent):
                    violations.append(
                        TraceViolation(
                            "fairness",
                            f"{len(sent) - got} sends on {sender}->{receiver} never delivered",
                        )
                    )
    return violations
