from decimal import Decimal

from lbforge.conditions import check_conditions, decisions
from lbforge.graph_core import Graph
from lbforge.sim_engine import EventKind, Trace, TraceEvent

from .conftest import make_cfg

CFG = make_cfg(Graph.complete(4))
INPUTS = {0: Decimal(0), 1: Decimal(0), 2: Decimal(1), 3: Decimal(1)}


def outputs_trace(outputs, halting=None):
    """Trace in which each node decides its output and then halts."""
    halting = set(outputs) if halting is None else set(halting)
    events = []
    for node, value in outputs.items():
        events.append(TraceEvent(len(events), 1, EventKind.DECIDE, node, value=Decimal(value)))
        if node in halting:
            events.append(TraceEvent(len(events), 1, EventKind.HALT, node))
    return Trace(tuple(events), tuple(range(4)))


def test_all_conditions_hold():
    trace = outputs_trace({0: "0.5", 1: "0.501", 2: "0.505", 3: "0.509"})
    report = check_conditions(trace, range(4), INPUTS, CFG)
    assert report.ok
    assert report.hull == (Decimal(0), Decimal(1))
    assert report.summary_lines() == [
        "validity: ok (outputs within [0, 1])",
        "agreement: ok",
        "termination: ok",
    ]


def test_agreement_is_inclusive_of_epsilon():
    trace = outputs_trace({0: "0.5", 1: "0.51", 2: "0.5", 3: "0.5"})
    assert check_conditions(trace, range(4), INPUTS, CFG).agreement


def test_agreement_witness_is_the_extreme_pair():
    trace = outputs_trace({0: "0.2", 1: "0.5", 2: "0.9", 3: "0.9"})
    report = check_conditions(trace, range(4), INPUTS, CFG)
    assert not report.agreement
    assert report.agreement_witness == (0, 2)
    assert report.failed() == ["agreement"]


def test_validity_uses_only_nonfaulty_inputs():
    trace = outputs_trace({0: "0", 1: "0", 2: "1", 3: "1"})
    inputs = {0: Decimal(0), 1: Decimal(0), 2: Decimal(0), 3: Decimal(1)}
    report = check_conditions(trace, [0, 1, 2], inputs, CFG)
    assert report.hull == (Decimal(0), Decimal(0))
    assert report.validity_witness == 2
    assert 3 not in report.decisions


def test_validity_witness():
    trace = outputs_trace({0: "0", 1: "1.5", 2: "1", 3: "1"})
    report = check_conditions(trace, range(4), INPUTS, CFG)
    assert report.validity_witness == 1
    assert report.summary_lines()[0] == "validity: FAILED node 1 output 1.5 outside [0, 1]"


def test_termination_needs_decide_and_halt():
    trace = outputs_trace({0: "0", 1: "0", 2: "0"}, halting=[0, 1])
    report = check_conditions(trace, range(4), INPUTS, CFG)
    assert not report.termination
    assert report.unterminated == [2, 3]
    assert report.summary_lines()[-1] == "termination: FAILED 2, 3 did not decide and halt"


def test_judged_subset():
    trace = outputs_trace({0: "0", 1: "1"}, halting=[0, 1])
    report = check_conditions(trace, range(4), INPUTS, CFG, judged=[0])
    assert report.ok
    assert report.decisions == {0: Decimal(0)}


def test_first_decision_counts():
    events = (
        TraceEvent(0, 1, EventKind.DECIDE, 0, value=Decimal("0.25")),
        TraceEvent(1, 2, EventKind.DECIDE, 0, value=Decimal("0.75")),
    )
    assert decisions(Trace(events, (0,))) == {0: Decimal("0.25")}


def test_to_dict():
    trace = outputs_trace({0: "0", 1: "1", 2: "1", 3: "1"})
    data = check_conditions(trace, range(4), INPUTS, CFG).to_dict()
    assert data["agreement"] is False
    assert data["agreement_witness"] == [0, 1]
    assert data["decisions"]["2"] == "1"
