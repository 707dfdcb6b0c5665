import json

import pytest

from lbforge.bundle import (
    GADGET_FILE,
    GADGET_TRACE,
    REPORT_FILE,
    recheck_bundle,
    report_to_dict,
    write_bundle,
)
from lbforge.errors import BundleFormatError
from lbforge.forge import VerdictKind, run_forge
from lbforge.protocols import build_victims, silent_behavior

from .conftest import make_cfg


@pytest.fixture
def diamond_report(diamond):
    cfg = make_cfg(diamond)
    return run_forge(2, diamond, 1, cfg, build_victims("naive", cfg, diamond), 0, 200_000)


@pytest.fixture
def bundle(tmp_path, diamond_report):
    return write_bundle(diamond_report, tmp_path / "bundle")


def rewrite_json_lines(path, edit):
    records = [json.loads(line) for line in path.read_text().splitlines()]
    edit(records)
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_bundle_layout(bundle):
    names = {p.name for p in bundle.iterdir()}
    assert names == {REPORT_FILE, GADGET_FILE, GADGET_TRACE, "E1.jsonl", "E2.jsonl", "E3.jsonl"}
    document = json.loads((bundle / REPORT_FILE).read_text())
    assert document["format"] == "lbforge-report/1"
    assert document["verdict"]["kind"] == "ViolatedValidity"
    assert document["partition"] == {"a": [0], "b": [1], "c1": [2], "c2": [3]}


def test_recheck_reproduces(bundle, diamond_report):
    result = recheck_bundle(bundle)
    assert result.ok, result.issues
    assert result.verdict == diamond_report.verdict


def test_report_document_is_stable(diamond_report):
    assert report_to_dict(diamond_report) == report_to_dict(diamond_report)


def test_tampered_decision_is_noticed(bundle):
    def bump(records):
        for record in records:
            if record["kind"] == "decide" and record["sender"] == 0:
                record["value"] = "0.25"

    rewrite_json_lines(bundle / "E2.jsonl", bump)
    result = recheck_bundle(bundle)
    assert not result.ok
    assert any("E2: recomputed decisions differ" in issue for issue in result.issues)


def test_tampered_payload_breaks_fifo(bundle):
    def corrupt(records):
        for record in records:
            if record["kind"] == "deliver":
                record["payload"] = "ff" + record["payload"][2:]
                return

    rewrite_json_lines(bundle / "E1.jsonl", corrupt)
    issues = recheck_bundle(bundle).issues
    assert any(issue.startswith("E1 trace: fifo") for issue in issues)


def test_tampered_verdict_is_noticed(bundle):
    path = bundle / REPORT_FILE
    document = json.loads(path.read_text())
    document["verdict"]["kind"] = "VictimSurvived"
    path.write_text(json.dumps(document))
    result = recheck_bundle(bundle)
    assert result.verdict.kind is VerdictKind.VIOLATED_VALIDITY
    assert any("differs from stored VictimSurvived" in issue for issue in result.issues)


def test_missing_trace(bundle):
    (bundle / "E1.jsonl").unlink()
    with pytest.raises(BundleFormatError):
        recheck_bundle(bundle)


def test_truncated_trace(bundle):
    path = bundle / "E3.jsonl"
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:-1]))
    with pytest.raises(BundleFormatError, match="events"):
        recheck_bundle(bundle)


def test_schema_violation(bundle):
    path = bundle / REPORT_FILE
    document = json.loads(path.read_text())
    del document["verdict"]
    path.write_text(json.dumps(document))
    with pytest.raises(BundleFormatError, match="verdict"):
        recheck_bundle(bundle)


def test_not_a_bundle(tmp_path):
    with pytest.raises(BundleFormatError):
        recheck_bundle(tmp_path)


def test_crash_only_bundle(tmp_path, complete3):
    cfg = make_cfg(complete3)
    factories = {u: silent_behavior for u in complete3.node_ids}
    report = run_forge(1, complete3, 1, cfg, factories, 0, 10_000)
    out = write_bundle(report, tmp_path / "stalled")
    assert not (out / GADGET_FILE).exists()
    result = recheck_bundle(out)
    assert result.ok, result.issues
    assert result.verdict.kind is VerdictKind.VICTIM_DID_NOT_TERMINATE
