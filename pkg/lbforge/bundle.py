"""
Report bundles: everything a forge run produced, on disk, re-checkable
without re-simulating.

    <out>/report.json     verdict, certificate, decisions, execution specs
    <out>/gadget.txt      gadget export
    <out>/gadget.jsonl    gadget execution trace
    <out>/E1.jsonl ...    one trace per execution on G
"""

import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Dict, List, Optional, Union

from jsonschema import Draft7Validator

from .copies import CopyId
from .errors import BundleFormatError, GraphFormatError, LbforgeError
from .forge import (
    ExecutionResult,
    ExecutionSpec,
    ForgeReport,
    Verdict,
    certify,
    decide_verdict,
    judge,
)
from .gadget import format_gadget, parse_gadget
from .graph_core import format_graph, parse_graph
from .protocols import ProtocolConfig
from .sim_engine import (
    RunOutcome,
    StartMode,
    Topology,
    Trace,
    check_trace_wellformed,
    read_trace,
    write_trace,
)
from .wire import display_value

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
GADGET_FILE = "gadget.txt"
GADGET_TRACE = "gadget.jsonl"
FORMAT = "lbforge-report/1"

_node_map = {"type": "object", "additionalProperties": {"type": "string"}}
_trace_ref = {
    "type": "object",
    "required": ["file", "outcome", "events"],
    "properties": {
        "file": {"type": "string"},
        "outcome": {"enum": [o.value for o in RunOutcome]},
        "events": {"type": "integer", "minimum": 0},
    },
}

REPORT_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "required": [
        "format",
        "construction",
        "seed",
        "victim",
        "cfg",
        "graph",
        "partition",
        "delta",
        "branch",
        "gadget",
        "executions",
        "verdict",
    ],
    "properties": {
        "format": {"const": FORMAT},
        "construction": {"enum": [1, 2]},
        "seed": {"type": "integer"},
        "victim": {"type": "string"},
        "cfg": {
            "type": "object",
            "required": ["epsilon", "lower", "upper", "n", "f"],
        },
        "graph": {"type": "string"},
        "partition": {"type": "object"},
        "delta": {"type": ["integer", "null"]},
        "branch": {"enum": ["base", "mirror", "cut", "none"]},
        "notes": {"type": "array", "items": {"type": "string"}},
        "gadget": {
            "oneOf": [
                {"type": "null"},
                {
                    "type": "object",
                    "required": ["file", "trace"],
                    "properties": {"file": {"type": "string"}, "trace": _trace_ref},
                },
            ]
        },
        "executions": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": [
                    "name",
                    "faulty",
                    "fault_kind",
                    "inputs",
                    "start_modes",
                    "view_map",
                    "judged",
                    "horizon",
                    "trace",
                    "decisions",
                    "certificate",
                ],
                "properties": {
                    "name": {"enum": ["E1", "E2", "E3"]},
                    "faulty": {"type": "array", "items": {"type": "integer"}},
                    "fault_kind": {"enum": ["crash", "replay"]},
                    "inputs": _node_map,
                    "start_modes": _node_map,
                    "view_map": _node_map,
                    "judged": {"type": "array", "items": {"type": "integer"}},
                    "horizon": {"type": ["integer", "null"]},
                    "trace": _trace_ref,
                    "decisions": _node_map,
                    "certificate": {"type": "object"},
                },
            },
        },
        "verdict": {
            "type": "object",
            "required": ["kind", "execution", "witness", "explanation"],
        },
    },
}


def _spec_to_dict(spec: ExecutionSpec) -> dict:
    return {
        "name": spec.name,
        "faulty": sorted(spec.faulty),
        "fault_kind": spec.fault_kind,
        "inputs": {str(u): str(v) for u, v in sorted(spec.inputs.items())},
        "start_modes": {str(u): str(m) for u, m in sorted(spec.start_modes.items())},
        "view_map": {str(u): str(c) for u, c in sorted(spec.view_map.items())},
        "judged": sorted(spec.judged),
        "horizon": spec.horizon,
    }


def _spec_from_dict(data: dict) -> ExecutionSpec:
    return ExecutionSpec(
        name=data["name"],
        faulty=frozenset(data["faulty"]),
        fault_kind=data["fault_kind"],
        inputs={int(u): Decimal(v) for u, v in data["inputs"].items()},
        start_modes={int(u): StartMode.parse(m) for u, m in data["start_modes"].items()},
        view_map={int(u): CopyId.parse(c) for u, c in data["view_map"].items()},
        judged=frozenset(data["judged"]),
        horizon=data["horizon"],
    )


def _decisions_to_dict(result: ExecutionResult) -> Dict[str, str]:
    decided = result.conditions.decisions
    return {str(u): display_value(v) for u, v in sorted(decided.items())}


def _certificate_to_dict(result: ExecutionResult) -> Dict[str, dict]:
    return {str(u): d.to_dict() for u, d in sorted(result.certificate.items())}


def report_to_dict(report: ForgeReport) -> dict:
    gadget = None
    if report.gadget is not None:
        gadget = {
            "file": GADGET_FILE,
            "trace": {
                "file": GADGET_TRACE,
                "outcome": report.gadget_trace.outcome.value,
                "events": len(report.gadget_trace.events),
            },
        }
    executions = []
    for result in report.executions:
        entry = _spec_to_dict(result.spec)
        entry["trace"] = {
            "file": f"{result.spec.name}.jsonl",
            "outcome": result.trace.outcome.value,
            "events": len(result.trace.events),
        }
        entry["decisions"] = _decisions_to_dict(result)
        entry["conditions"] = result.conditions.to_dict()
        entry["certificate"] = _certificate_to_dict(result)
        executions.append(entry)
    return {
        "format": FORMAT,
        "construction": report.construction,
        "seed": report.seed,
        "victim": report.victim,
        "cfg": report.cfg.to_dict(),
        "graph": format_graph(report.graph),
        "partition": report.partition.to_dict(),
        "delta": report.delta,
        "branch": report.branch,
        "notes": list(report.notes),
        "gadget": gadget,
        "executions": executions,
        "verdict": report.verdict.to_dict(),
    }


def write_bundle(report: ForgeReport, out_dir: Union[str, Path]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if report.gadget is not None:
        (out / GADGET_FILE).write_text(format_gadget(report.gadget), encoding="utf-8")
        write_trace(report.gadget_trace, out / GADGET_TRACE)
    for result in report.executions:
        write_trace(result.trace, out / f"{result.spec.name}.jsonl")
    document = report_to_dict(report)
    (out / REPORT_FILE).write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote report bundle to %s", out)
    return out


@dataclass
class RecheckResult:
    verdict: Verdict
    issues: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


def _load_trace(bundle: Path, ref: dict, nodes) -> Trace:
    path = bundle / ref["file"]
    try:
        trace = read_trace(path, nodes, RunOutcome(ref["outcome"]))
    except (OSError, ValueError, ArithmeticError, KeyError, TypeError) as e:
        raise BundleFormatError(f"cannot load {ref['file']}: {e}")
    if len(trace.events) != ref["events"]:
        raise BundleFormatError(
            f"{ref['file']} has {len(trace.events)} events, report says {ref['events']}"
        )
    return trace


def recheck_bundle(path: Union[str, Path]) -> RecheckResult:
    """Recompute decisions, certificate and verdict from the stored traces."""
    bundle = Path(path)
    try:
        document = json.loads((bundle / REPORT_FILE).read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise BundleFormatError(f"cannot read {REPORT_FILE}: {e}")
    errors = sorted(Draft7Validator(REPORT_SCHEMA).iter_errors(document), key=str)
    if errors:
        first = errors[0]
        location = "/".join(str(p) for p in first.absolute_path) or "<root>"
        raise BundleFormatError(f"{REPORT_FILE} at {location}: {first.message}")

    try:
        g = parse_graph(document["graph"])
        cfg = ProtocolConfig.from_dict(document["cfg"])
        specs = [_spec_from_dict(entry) for entry in document["executions"]]
        stored_verdict = Verdict.from_dict(document["verdict"])
    except (LbforgeError, ValueError, ArithmeticError) as e:
        raise BundleFormatError(f"{REPORT_FILE} is inconsistent: {e}")

    gadget_trace: Optional[Trace] = None
    gadget_topology: Optional[Topology] = None
    if document["gadget"] is not None:
        try:
            text = (bundle / document["gadget"]["file"]).read_text(encoding="utf-8")
            gadget_topology, _, _ = parse_gadget(text)
        except (OSError, GraphFormatError) as e:
            raise BundleFormatError(f"cannot load gadget: {e}")
        gadget_trace = _load_trace(bundle, document["gadget"]["trace"], gadget_topology.copies)

    issues: List[str] = []
    if gadget_trace is not None:
        for v in check_trace_wellformed(gadget_trace, gadget_topology):
            issues.append(f"gadget trace: {v.kind}: {v.message}")

    topology = Topology.from_graph(g)
    results: List[ExecutionResult] = []
    for spec, entry in zip(specs, document["executions"]):
        trace = _load_trace(bundle, entry["trace"], g.node_ids)
        for v in check_trace_wellformed(trace, topology):
            issues.append(f"{spec.name} trace: {v.kind}: {v.message}")
        certificate = certify(spec, trace, gadget_trace) if gadget_trace is not None else {}
        result = ExecutionResult(spec, trace, judge(spec, trace, cfg), certificate)
        results.append(result)
        if _decisions_to_dict(result) != entry["decisions"]:
            issues.append(f"{spec.name}: recomputed decisions differ from the report")
        if _certificate_to_dict(result) != entry["certificate"]:
            issues.append(f"{spec.name}: recomputed view certificate differs from the report")

    gadget_outcome = gadget_trace.outcome if gadget_trace is not None else None
    verdict = decide_verdict(results, gadget_outcome, document["construction"], cfg)
    if verdict.to_dict() != stored_verdict.to_dict():
        issues.append(
            f"recomputed verdict {verdict.kind.value}"
            f" differs from stored {stored_verdict.kind.value}"
        )
    logger.info("Rechecked %s: %d issue(s)", bundle, len(issues))
    return RecheckResult(verdict, issues)
