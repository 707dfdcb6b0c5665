"""Trace-level checks of epsilon-agreement, validity and termination."""

from dataclasses import dataclass, field
from decimal import Decimal
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Tuple

from .copies import node_key, node_to_json
from .protocols import ProtocolConfig
from .sim_engine import EventKind, Trace
from .wire import display_value


def decisions(trace: Trace) -> Dict[Hashable, Decimal]:
    """First decided value per node."""
    decided: Dict[Hashable, Decimal] = {}
    for event in trace.events:
        if event.kind is EventKind.DECIDE and event.sender not in decided:
            decided[event.sender] = event.value
    return decided


@dataclass
class ConditionReport:
    agreement: bool
    validity: bool
    termination: bool
    decisions: Dict[Hashable, Decimal] = field(default_factory=dict)
    hull: Tuple[Decimal, Decimal] = (Decimal(0), Decimal(0))
    # (node, node) farthest apart when agreement fails
    agreement_witness: Optional[Tuple[Hashable, Hashable]] = None
    # node whose output left the hull
    validity_witness: Optional[Hashable] = None
    unterminated: List[Hashable] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.agreement and self.validity and self.termination

    def failed(self) -> List[str]:
        names = []
        if not self.validity:
            names.append("validity")
        if not self.agreement:
            names.append("agreement")
        if not self.termination:
            names.append("termination")
        return names

    def summary_lines(self) -> List[str]:
        lines = []
        lo, hi = display_value(self.hull[0]), display_value(self.hull[1])
        out = {u: display_value(v) for u, v in self.decisions.items()}
        if self.validity:
            lines.append(f"validity: ok (outputs within [{lo}, {hi}])")
        else:
            node = self.validity_witness
            lines.append(
                f"validity: FAILED node {node} output {out[node]} outside [{lo}, {hi}]"
            )
        if self.agreement:
            lines.append("agreement: ok")
        else:
            u, v = self.agreement_witness
            lines.append(
                f"agreement: FAILED node {u} output {out[u]}, "
                f"node {v} output {out[v]}"
            )
        if self.termination:
            lines.append("termination: ok")
        else:
            lines.append(
                "termination: FAILED "
                + ", ".join(str(n) for n in self.unterminated)
                + " did not decide and halt"
            )
        return lines

    def to_dict(self) -> dict:
        return {
            "agreement": self.agreement,
            "validity": self.validity,
            "termination": self.termination,
            "decisions": {
                str(node_to_json(k)): display_value(v) for k, v in self.decisions.items()
            },
            "hull": [display_value(self.hull[0]), display_value(self.hull[1])],
            "agreement_witness": (
                None
                if self.agreement_witness is None
                else [node_to_json(n) for n in self.agreement_witness]
            ),
            "validity_witness": (
                None if self.validity_witness is None else node_to_json(self.validity_witness)
            ),
            "unterminated": [node_to_json(n) for n in self.unterminated],
        }


def check_conditions(
    trace: Trace,
    nonfaulty: Iterable[Hashable],
    inputs: Mapping[Hashable, Decimal],
    cfg: ProtocolConfig,
    judged: Optional[Iterable[Hashable]] = None,
) -> ConditionReport:
    """
    Evaluate the three conditions over the non-faulty nodes of a trace.

    The validity hull spans the inputs of every non-faulty node; `judged`
    restricts whose outputs are examined (defaults to all non-faulty nodes).
    """
    nonfaulty = sorted(set(nonfaulty), key=node_key)
    judged = nonfaulty if judged is None else sorted(set(judged), key=node_key)
    hull_inputs = [Decimal(inputs[u]) for u in nonfaulty]
    lo, hi = min(hull_inputs), max(hull_inputs)

    decided_all = decisions(trace)
    decided = {u: decided_all[u] for u in judged if u in decided_all}
    halted = trace.halted()

    unterminated = [u for u in judged if u not in decided or u not in halted]
    outside = [u for u in judged if u in decided and not lo <= decided[u] <= hi]

    agreement_witness = None
    if decided:
        low = min(decided, key=lambda u: (decided[u], node_key(u)))
        high = max(decided, key=lambda u: (decided[u], [-k for k in node_key(u)]))
        if decided[high] - decided[low] > cfg.epsilon:
            agreement_witness = tuple(sorted((low, high), key=node_key))

    return ConditionReport(
        agreement=agreement_witness is None,
        validity=not outside,
        termination=not unterminated,
        decisions=decided,
        hull=(lo, hi),
        agreement_witness=agreement_witness,
        validity_witness=outside[0] if outside else None,
        unterminated=unterminated,
    )
