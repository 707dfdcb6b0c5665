"""
Protocols
=========

Behaviors that run on the engine:

- ApproxConsensus: approximate Byzantine consensus for graphs with
  n >= 3f+1 and vertex connectivity >= 2f+1. Every round a node reliably
  broadcasts its value, reports the first n-f values it accepted, waits for
  n-f witnesses (nodes whose report it can fully confirm) and moves to the
  midpoint of the accepted values after discarding the f lowest and f highest.
  A decided node keeps relaying and halts only once it has accepted done from
  n-f origins and from every origin it has accepted any message from.
- RelayLayer: path flooding that accepts a broadcast once f+1 node-disjoint
  paths carried the same value, so non-neighbors can talk reliably.
- NaiveAveraging, InstantBehavior: deliberately fragile victims for the forge.
- CrashBehavior, ReplayBehavior and the Byzantine strategy library.
"""

import hashlib
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from decimal import Decimal
from functools import lru_cache, partial
from typing import (
    Callable,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np

from .errors import InfeasibleConfiguration, ScenarioError, WireFormatError
from .graph_core import Graph, vertex_connectivity
from .sim_engine import Action, Behavior, Broadcast, Decide, Halt, StartMode
from .wire import (
    Tag,
    WireMessage,
    format_origins,
    format_value,
    parse_origins,
    parse_value,
    quantize,
)

logger = logging.getLogger(__name__)

VICTIMS = ("approx", "naive", "naive-max", "instant")
STRATEGIES = ("crash", "constant-extreme", "random-in-range", "silent", "mutating-relay")
EXTREME_VALUE = Decimal(1000)
DONE_ROUND = 0


@dataclass(frozen=True)
class ProtocolConfig:
    epsilon: Decimal
    lower: Decimal
    upper: Decimal
    n: int
    f: int

    def __post_init__(self):
        for name in ("epsilon", "lower", "upper"):
            value = Decimal(str(getattr(self, name)))
            if not value.is_finite():
                raise ScenarioError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        if not self.lower < self.upper:
            raise ScenarioError(f"lower bound {self.lower} must be below upper bound {self.upper}")
        if not self.upper - self.lower > self.epsilon > 0:
            raise ScenarioError("need U - L > epsilon > 0")
        if not 0 < self.f < self.n:
            raise ScenarioError(f"f must satisfy 0 < f < n (f={self.f}, n={self.n})")

    def to_dict(self) -> dict:
        return {
            "epsilon": str(self.epsilon),
            "lower": str(self.lower),
            "upper": str(self.upper),
            "n": self.n,
            "f": self.f,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProtocolConfig":
        return cls(
            Decimal(data["epsilon"]),
            Decimal(data["lower"]),
            Decimal(data["upper"]),
            int(data["n"]),
            int(data["f"]),
        )


def default_rounds(cfg: ProtocolConfig) -> int:
    """Rounds needed to shrink U - L below epsilon by halving."""
    return math.ceil(math.log2((cfg.upper - cfg.lower) / cfg.epsilon)) + 1


def trimmed_midpoint(values: Iterable[Decimal], f: int) -> Decimal:
    ordered = sorted(values)
    if len(ordered) <= 2 * f:
        raise ValueError(f"need more than {2 * f} values to trim, got {len(ordered)}")
    kept = ordered[f : len(ordered) - f]
    return quantize((kept[0] + kept[-1]) / 2)


@lru_cache(maxsize=64)
def _feasible(g: Graph, f: int) -> bool:
    return g.n >= 3 * f + 1 and vertex_connectivity(g) >= 2 * f + 1


def require_feasible(cfg: ProtocolConfig, g: Graph) -> None:
    if cfg.n != g.n:
        raise ScenarioError(f"configuration is for n={cfg.n} but the graph has {g.n} nodes")
    if not _feasible(g, cfg.f):
        raise InfeasibleConfiguration(
            f"approximate consensus needs n >= {3 * cfg.f + 1} and connectivity >= "
            f"{2 * cfg.f + 1}; this graph has n={g.n}, kappa={vertex_connectivity(g)}"
        )


def has_disjoint_paths(paths: Sequence[FrozenSet[int]], k: int) -> bool:
    """True when k of the given node sets are pairwise disjoint."""
    ordered = sorted(paths, key=lambda p: (len(p), sorted(p)))

    def search(start: int, used: FrozenSet[int], need: int) -> bool:
        if need == 0:
            return True
        for i in range(start, len(ordered)):
            if not ordered[i] & used and search(i + 1, used | ordered[i], need - 1):
                return True
        return False

    return search(0, frozenset(), k)


Content = Tuple[Tag, int, int]


class RelayLayer:
    """
    Reliable transmission over a sparse graph.

    A message from its origin is accepted on sight. A relayed message carries
    the relayers in order (origin excluded, last entry is the sender); it is
    accepted once f+1 pairwise disjoint relayer sets carried the same value.
    After accepting, a node vouches once with a single-hop path and stops
    forwarding that broadcast. Complete graphs never relay.
    """

    def __init__(
        self,
        g: Graph,
        f: int,
        self_id: int,
        mutate: Optional[Callable[[WireMessage], WireMessage]] = None,
    ):
        self.g = g
        self.f = f
        self.self_id = self_id
        self.enabled = not g.is_complete()
        self.max_path = g.n - 2
        self.accepted: Dict[Content, str] = {}
        self._paths: Dict[Tuple[Content, str], List[FrozenSet[int]]] = defaultdict(list)
        self._relayed: Dict[Tuple[Content, str], List[FrozenSet[int]]] = defaultdict(list)
        self._mutate = mutate

    def originate(self, tag: Tag, rnd: int, value: str) -> List[Action]:
        message = WireMessage(tag, self.self_id, rnd, value)
        self.accepted.setdefault(message.content, value)
        return [Broadcast(message.encode())]

    def receive(
        self, sender: int, message: WireMessage
    ) -> Tuple[Optional[WireMessage], List[Action]]:
        """Returns the message if this delivery made it accepted, plus relay traffic."""
        if message.content in self.accepted or not self._plausible(sender, message):
            return None, []
        if not message.tag.is_relay:
            self.accepted[message.content] = message.value
            return message, self._vouch(message)
        if not self.enabled:
            return None, []

        key = (message.content, message.value)
        nodes = frozenset(message.path)
        paths = self._paths[key]
        if any(p <= nodes for p in paths):
            return None, []
        paths[:] = [p for p in paths if not nodes <= p]
        paths.append(nodes)
        if has_disjoint_paths(paths, self.f + 1):
            self.accepted[message.content] = message.value
            return message, self._vouch(message)
        return None, self._forward(key, message)

    def _plausible(self, sender: int, message: WireMessage) -> bool:
        if not 0 <= message.origin < self.g.n:
            return False
        if not message.tag.is_relay:
            return message.origin == sender and not message.path
        path = message.path
        return (
            0 < len(path) <= self.max_path
            and path[-1] == sender
            and len(set(path)) == len(path)
            and self.self_id not in path
            and message.origin not in path
            and all(0 <= node < self.g.n for node in path)
        )

    def _emit(self, message: WireMessage) -> List[Action]:
        if self._mutate is not None:
            message = self._mutate(message)
        return [Broadcast(message.encode())]

    def _vouch(self, message: WireMessage) -> List[Action]:
        if not self.enabled:
            return []
        vouch = WireMessage(
            message.tag.relayed, message.origin, message.round, message.value, (self.self_id,)
        )
        return self._emit(vouch)

    def _forward(self, key, message: WireMessage) -> List[Action]:
        if len(message.path) + 1 > self.max_path:
            return []
        forwarded = message.extended(self.self_id)
        nodes = frozenset(forwarded.path)
        relayed = self._relayed[key]
        if any(r <= nodes for r in relayed):
            return []
        relayed.append(nodes)
        return self._emit(forwarded)


def reliable_relay_layer(g: Graph, f: int, self_id: int) -> RelayLayer:
    if vertex_connectivity(g) < 2 * f + 1:
        raise InfeasibleConfiguration(
            f"reliable relaying needs connectivity >= {2 * f + 1}"
        )
    return RelayLayer(g, f, self_id)


def _validate_payload(message: WireMessage, n: int) -> None:
    base = message.tag.base
    if base in (Tag.VALUE, Tag.DONE):
        parse_value(message.value)
    elif base is Tag.REPORT:
        if any(not 0 <= o < n for o in parse_origins(message.value)):
            raise WireFormatError("report lists an unknown node")


class ApproxConsensus:
    """Witness-based approximate consensus; see module docstring."""

    def __init__(
        self,
        cfg: ProtocolConfig,
        g: Graph,
        self_id: int,
        rounds: Optional[int] = None,
        relay: Optional[RelayLayer] = None,
        check_feasible: bool = True,
    ):
        if check_feasible:
            require_feasible(cfg, g)
        self.cfg = cfg
        self.g = g
        self.self_id = self_id
        self.rounds = rounds or default_rounds(cfg)
        self.relay = relay or RelayLayer(g, cfg.f, self_id)
        self.quorum = g.n - cfg.f
        self.round = 0
        self.value: Optional[Decimal] = None
        self.decision: Optional[Decimal] = None
        self.halted = False
        self._values: Dict[int, Dict[int, Decimal]] = defaultdict(dict)
        self._reports: Dict[int, Dict[int, FrozenSet[int]]] = defaultdict(dict)
        self._reported: set = set()
        self._done: Dict[int, Decimal] = {}
        self._heard: set = {self_id}

    def round_value(self, rnd: int) -> Decimal:
        return self.value

    def on_init(self, input_value: Decimal) -> List[Action]:
        self.value = quantize(input_value)
        return self._enter_round(1) + self._progress()

    def on_message(self, sender: int, payload: bytes) -> List[Action]:
        if self.halted:
            return []
        try:
            message = WireMessage.decode(payload)
            _validate_payload(message, self.g.n)
        except WireFormatError as e:
            logger.debug("Node %s dropped payload from %s: %s", self.self_id, sender, e)
            return []
        accepted, actions = self.relay.receive(sender, message)
        if accepted is not None:
            self._record(accepted)
        return actions + self._progress()

    def _record(self, message: WireMessage) -> None:
        self._heard.add(message.origin)
        base = message.tag.base
        if base is Tag.VALUE:
            self._values[message.round][message.origin] = parse_value(message.value)
        elif base is Tag.REPORT:
            self._reports[message.round][message.origin] = frozenset(parse_origins(message.value))
        else:
            self._done[message.origin] = parse_value(message.value)

    def _enter_round(self, rnd: int) -> List[Action]:
        self.round = rnd
        value = quantize(self.round_value(rnd))
        self._values[rnd][self.self_id] = value
        return self.relay.originate(Tag.VALUE, rnd, format_value(value))

    def _decide(self, value: Decimal) -> List[Action]:
        self.decision = value
        self._done[self.self_id] = value
        return [Decide(value)] + self.relay.originate(Tag.DONE, DONE_ROUND, format_value(value))

    def _progress(self) -> List[Action]:
        f = self.cfg.f
        actions: List[Action] = []
        while self.decision is None:
            if len(self._done) >= 2 * f + 1:
                actions += self._decide(trimmed_midpoint(self._done.values(), f))
                break
            rnd = self.round
            values = self._values[rnd]
            if rnd not in self._reported:
                if len(values) < self.quorum:
                    break
                self._reported.add(rnd)
                self._reports[rnd][self.self_id] = frozenset(values)
                actions += self.relay.originate(Tag.REPORT, rnd, format_origins(values))
            witnesses = [
                q for q, listed in self._reports[rnd].items() if listed.issubset(values)
            ]
            if len(witnesses) < self.quorum:
                break
            self.value = trimmed_midpoint(values.values(), f)
            if rnd == self.rounds:
                actions += self._decide(self.value)
                break
            actions += self._enter_round(rnd + 1)

        if self.decision is not None and not self.halted and self._settled():
            self.halted = True
            actions.append(Halt())
        return actions

    def _settled(self) -> bool:
        # done from every origin heard from, not only a quorum
        return len(self._done) >= self.quorum and self._heard.issubset(self._done)


def approx_consensus_behavior(
    cfg: ProtocolConfig, g: Graph, self_id: int, rounds: Optional[int] = None
) -> ApproxConsensus:
    return ApproxConsensus(cfg, g, self_id, rounds)


class CrashBehavior:
    """Never acts. Started Crashed it is a crash fault, started Normal it is silent."""

    def on_init(self, input_value: Decimal) -> List[Action]:
        return []

    def on_message(self, sender: int, payload: bytes) -> List[Action]:
        return []


def crash_behavior() -> CrashBehavior:
    return CrashBehavior()


def silent_behavior() -> CrashBehavior:
    return CrashBehavior()


ScriptEntry = Union[bytes, Tuple[int, bytes]]


class ReplayBehavior:
    """
    Broadcasts a recorded script regardless of what it receives.

    Timed entries (time, payload) are emitted at their recorded logical time
    and followed by a halt at the last of them. Untimed entries are emitted one
    per callback, and the node halts once the script is exhausted.
    """

    def __init__(self, script: Sequence[ScriptEntry]):
        self.script = list(script)
        self.timed = bool(self.script) and isinstance(self.script[0], tuple)
        if any(isinstance(e, tuple) != self.timed for e in self.script):
            raise ValueError("replay script mixes timed and untimed entries")
        self._position = 0

    def on_init(self, input_value: Decimal) -> List[Action]:
        if not self.script:
            return [Halt()]
        if self.timed:
            actions: List[Action] = [Broadcast(p, not_before=t) for t, p in self.script]
            actions.append(Halt(not_before=self.script[-1][0]))
            return actions
        return self._next()

    def on_message(self, sender: int, payload: bytes) -> List[Action]:
        return [] if self.timed else self._next()

    def _next(self) -> List[Action]:
        if self._position >= len(self.script):
            return []
        actions: List[Action] = [Broadcast(self.script[self._position])]
        self._position += 1
        if self._position == len(self.script):
            actions.append(Halt())
        return actions


def replay_behavior(script: Sequence[ScriptEntry]) -> ReplayBehavior:
    return ReplayBehavior(script)


class NaiveAveraging:
    """
    Floods values and averages (or maximises) the first n-f it sees per round.

    No quorum intersection, no trimming, no reliable relaying.
    """

    def __init__(
        self, cfg: ProtocolConfig, g: Graph, self_id: int, rounds: int, update: str = "mean"
    ):
        if rounds < 1:
            raise ScenarioError("naive victims need at least one round")
        if update not in ("mean", "max"):
            raise ScenarioError(f"unknown update rule {update!r}")
        self.self_id = self_id
        self.rounds = rounds
        self.update = update
        self.quorum = g.n - cfg.f
        self.round = 0
        self.value: Optional[Decimal] = None
        self.halted = False
        self._seen: set = set()
        self._values: Dict[int, List[Decimal]] = defaultdict(list)

    def on_init(self, input_value: Decimal) -> List[Action]:
        self.value = quantize(input_value)
        return self._enter_round(1) + self._progress()

    def on_message(self, sender: int, payload: bytes) -> List[Action]:
        if self.halted:
            return []
        try:
            message = WireMessage.decode(payload)
            if message.tag.base is not Tag.VALUE:
                return []
            value = parse_value(message.value)
        except WireFormatError:
            return []
        key = (message.origin, message.round)
        if key in self._seen:
            return []
        self._seen.add(key)
        self._values[message.round].append(value)
        return [Broadcast(message.extended(self.self_id).encode())] + self._progress()

    def _enter_round(self, rnd: int) -> List[Action]:
        self.round = rnd
        self._seen.add((self.self_id, rnd))
        self._values[rnd].append(self.value)
        message = WireMessage(Tag.VALUE, self.self_id, rnd, format_value(self.value))
        return [Broadcast(message.encode())]

    def _progress(self) -> List[Action]:
        actions: List[Action] = []
        while not self.halted:
            collected = self._values[self.round]
            if len(collected) < self.quorum:
                break
            chosen = collected[: self.quorum]
            if self.update == "max":
                self.value = quantize(max(chosen))
            else:
                self.value = quantize(sum(chosen) / len(chosen))
            if self.round == self.rounds:
                self.halted = True
                actions += [Decide(self.value), Halt()]
                break
            actions += self._enter_round(self.round + 1)
        return actions


def naive_behavior(
    cfg: ProtocolConfig, g: Graph, self_id: int, rounds: int, update: str = "mean"
) -> NaiveAveraging:
    return NaiveAveraging(cfg, g, self_id, rounds, update)


class InstantBehavior:
    """Decides its own input immediately."""

    def on_init(self, input_value: Decimal) -> List[Action]:
        return [Decide(quantize(input_value)), Halt()]

    def on_message(self, sender: int, payload: bytes) -> List[Action]:
        return []


def instant_behavior() -> InstantBehavior:
    return InstantBehavior()


# Byzantine strategies


class ConstantExtreme(ApproxConsensus):
    def round_value(self, rnd: int) -> Decimal:
        return EXTREME_VALUE


class RandomInRange(ApproxConsensus):
    """Reports a fresh uniform value from [L-(U-L), U+(U-L)] every round."""

    def __init__(self, cfg: ProtocolConfig, g: Graph, self_id: int, seed: int, **kwargs):
        super().__init__(cfg, g, self_id, **kwargs)
        digest = hashlib.sha256(f"{seed}:byzantine:{self_id}".encode()).digest()
        self._rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "big")))
        width = cfg.upper - cfg.lower
        self._low = float(cfg.lower - width)
        self._high = float(cfg.upper + width)

    def round_value(self, rnd: int) -> Decimal:
        return quantize(Decimal(repr(self._rng.uniform(self._low, self._high))))


def shift_relayed_value(message: WireMessage, amount: Decimal = Decimal(1)) -> WireMessage:
    if message.tag.base not in (Tag.VALUE, Tag.DONE):
        return message
    shifted = format_value(parse_value(message.value) + amount)
    return WireMessage(message.tag, message.origin, message.round, shifted, message.path)


def byzantine_behavior(
    strategy: str, cfg: ProtocolConfig, g: Graph, node: int, seed: int
) -> Tuple[Behavior, StartMode]:
    """Behavior and start mode for a faulty node running `strategy`."""
    honest = dict(check_feasible=False)
    if strategy == "crash":
        return CrashBehavior(), StartMode.crashed()
    if strategy == "silent":
        return CrashBehavior(), StartMode.normal()
    if strategy == "constant-extreme":
        return ConstantExtreme(cfg, g, node, **honest), StartMode.normal()
    if strategy == "random-in-range":
        return RandomInRange(cfg, g, node, seed, **honest), StartMode.normal()
    if strategy == "mutating-relay":
        relay = RelayLayer(g, cfg.f, node, mutate=shift_relayed_value)
        return ApproxConsensus(cfg, g, node, relay=relay, **honest), StartMode.normal()
    raise ScenarioError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")


def build_victims(
    name: str, cfg: ProtocolConfig, g: Graph, rounds: Optional[int] = None
) -> Dict[int, Callable[[], Behavior]]:
    """One fresh-instance factory per node for the named algorithm."""
    if name == "approx":
        require_feasible(cfg, g)
        return {u: partial(ApproxConsensus, cfg, g, u, rounds) for u in g.node_ids}
    if name in ("naive", "naive-max"):
        update = "max" if name == "naive-max" else "mean"
        count = rounds or default_rounds(cfg)
        return {u: partial(NaiveAveraging, cfg, g, u, count, update) for u in g.node_ids}
    if name == "instant":
        return {u: InstantBehavior for u in g.node_ids}
    raise ScenarioError(f"unknown victim {name!r}; choose from {', '.join(VICTIMS)}")
