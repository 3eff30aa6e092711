"""Run reports: JSON (source of truth) and a self-contained HTML page."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from html import escape
from pathlib import Path
from typing import Iterable

from .client import Mismatch, RunPlan, TestResult, Verdict
from .codec import IsoMsg

REPORT_VERSION = 1


class ReportError(ValueError):
    pass


def summarize(results: Iterable[TestResult]) -> dict[str, int]:
    totals = {v.value: 0 for v in Verdict}
    for result in results:
        totals[Verdict(result.verdict).value] += 1
    return totals


@dataclass(frozen=True)
class PlanSummary:
    suite_size: int
    templates: tuple[str, ...]
    endpoints: tuple[str, ...]
    iterations: int
    seed: int

    @classmethod
    def of(cls, run: RunPlan) -> PlanSummary:
        return cls(len(run.suite), tuple(t.name for t in run.suite), tuple(str(e) for e in run.endpoints),
                   run.iterations, run.seed)

    @property
    def planned(self) -> int:
        return self.suite_size * len(self.endpoints) * self.iterations


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    run_id: str
    started_at: datetime
    finished_at: datetime
    plan: PlanSummary
    results: tuple[TestResult, ...]
    totals: dict[str, int] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "results", tuple(self.results))
        if any(r is None for r in self.results):
            raise ReportError("report has planned sends without a result")
        counted = summarize(self.results)
        if self.totals is None:
            object.__setattr__(self, "totals", counted)
        elif dict(self.totals) != counted:
            raise ReportError(f"totals {dict(self.totals)} do not match results {counted}")
        if self.finished_at < self.started_at:
            raise ReportError("report finishes before it starts")

    @property
    def ok(self) -> bool:
        return self.totals["pass"] == len(self.results)

    def totals_line(self) -> str:
        t = self.totals
        return (f"{len(self.results)} sent: {t['pass']} pass, {t['fail']} fail, "
                f"{t['timeout']} timeout, {t['error']} error")


def _message_to_json(msg: IsoMsg | None):
    if msg is None:
        return None
    fields = {}
    for n, value in msg.fields.items():
        fields[str(n)] = {"hex": value.hex().upper()} if isinstance(value, bytes) else value
    return {"mti": msg.mti, "fields": fields}


def _message_from_json(doc) -> IsoMsg | None:
    if doc is None:
        return None
    fields = {}
    for n, value in doc["fields"].items():
        fields[int(n)] = bytes.fromhex(value["hex"]) if isinstance(value, dict) else value
    return IsoMsg(doc["mti"], fields)


def report_to_dict(report: TestReport) -> dict:
    plan = report.plan
    return {
        "version": REPORT_VERSION,
        "run_id": report.run_id,
        "started_at": report.started_at.isoformat(),
        "finished_at": report.finished_at.isoformat(),
        "plan": {
            "suite_size": plan.suite_size,
            "templates": list(plan.templates),
            "endpoints": list(plan.endpoints),
            "iterations": plan.iterations,
            "seed": plan.seed,
        },
        "totals": dict(report.totals),
        "results": [
            {
                "template": r.template,
                "iteration": r.iteration,
                "channel": r.channel,
                "endpoint": r.endpoint,
                "verdict": r.verdict.value,
                "latency_ms": r.latency_ms,
                "mismatches": [{"field": m.field, "expected": m.expected, "actual": m.actual}
                               for m in r.mismatches],
                "detail": r.detail,
                "request": _message_to_json(r.request),
                "response": _message_to_json(r.response),
            }
            for r in report.results
        ],
    }


def render_json(report: TestReport) -> bytes:
    return (json.dumps(report_to_dict(report), indent=2) + "\n").encode("utf-8")


def parse_json(data: bytes | str) -> TestReport:
    try:
        doc = json.loads(data)
        plan = doc["plan"]
        results = tuple(
            TestResult(
                r["template"], r["iteration"], r["channel"], r["endpoint"],
                _message_from_json(r["request"]), _message_from_json(r["response"]),
                Verdict(r["verdict"]),
                tuple(Mismatch(m["field"], m["expected"], m["actual"]) for m in r["mismatches"]),
                r["latency_ms"], r.get("detail", ""),
            )
            for r in doc["results"]
        )
        return TestReport(
            doc["run_id"],
            datetime.fromisoformat(doc["started_at"]),
            datetime.fromisoformat(doc["finished_at"]),
            PlanSummary(plan["suite_size"], tuple(plan["templates"]), tuple(plan["endpoints"]),
                        plan["iterations"], plan["seed"]),
            results,
            doc["totals"],
        )
    except ReportError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ReportError(f"not a valid report: {exc!r}") from None


_CSS = """
body { font-family: Arial, Helvetica, sans-serif; margin: 24px; color: #222; }
h1 { color: #333366; font-size: 1.5em; }
table { border-collapse: collapse; margin-bottom: 18px; }
th, td { border: 1px solid #ccc; padding: 4px 8px; text-align: left; vertical-align: top; font-size: 0.9em; }
th { background: #f0f0f5; }
tr.pass td.verdict { color: #1a7f37; font-weight: bold; }
tr.fail { background: #fff0f0; }
tr.fail td.verdict { color: #c62828; font-weight: bold; }
tr.timeout { background: #fff8e1; }
tr.timeout td.verdict { color: #b26a00; font-weight: bold; }
tr.error { background: #fbe9e7; }
tr.error td.verdict { color: #7f0000; font-weight: bold; }
.summary td.count { text-align: right; }
code { font-size: 0.85em; }
details table { margin: 4px 0; }
"""


def _e(value) -> str:
    return escape(str(value), quote=True)


def _fields_table(msg: IsoMsg | None, title: str) -> str:
    if msg is None:
        return f"<p>{title}: none</p>"
    rows = [f"<tr><td>0</td><td><code>{_e(msg.mti)}</code></td></tr>"]
    for n, value in msg.fields.items():
        text = value.hex().upper() if isinstance(value, bytes) else value
        rows.append(f"<tr><td>{n}</td><td><code>{_e(text)}</code></td></tr>")
    return (f"<table><tr><th colspan=\"2\">{title}</th></tr>"
            + "".join(rows) + "</table>")


def _result_row(index: int, r: TestResult) -> str:
    detail = []
    if r.mismatches:
        cells = "".join(
            f"<tr class=\"mismatch\"><td>{m.field}</td><td><code>{_e(m.expected)}</code></td>"
            f"<td><code>{_e('absent' if m.actual is None else m.actual)}</code></td></tr>"
            for m in r.mismatches
        )
        detail.append("<table><tr><th>field</th><th>expected</th><th>actual</th></tr>" + cells + "</table>")
    if r.detail:
        detail.append(f"<p>{_e(r.detail)}</p>")
    detail.append(_fields_table(r.request, "request"))
    detail.append(_fields_table(r.response, "response"))
    summary = f"{len(r.mismatches)} mismatch(es)" if r.mismatches else "messages"
    return (
        f"<tr class=\"result {r.verdict.value}\"><td>{index}</td><td>{_e(r.template)}</td>"
        f"<td>{r.iteration}</td><td>{_e(r.channel)}</td><td class=\"verdict\">{r.verdict.value}</td>"
        f"<td>{r.latency_ms:.1f}</td>"
        f"<td><details><summary>{summary}</summary>{''.join(detail)}</details></td></tr>"
    )


def render_html(report: TestReport) -> bytes:
    """One standalone page: summary table plus one row per result."""
    plan = report.plan
    totals = "".join(
        f"<tr><td>{v.value}</td><td class=\"count\">{report.totals[v.value]}</td></tr>" for v in Verdict)
    rows = "\n".join(_result_row(i, r) for i, r in enumerate(report.results, start=1))
    page = f"""<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8"/>
<title>Regression report {_e(report.run_id)}</title>
<style>{_CSS}</style>
</head>
<body>
<h1>Regression report {_e(report.run_id)}</h1>
<table class="plan">
<tr><th>started</th><td>{_e(report.started_at.isoformat())}</td></tr>
<tr><th>finished</th><td>{_e(report.finished_at.isoformat())}</td></tr>
<tr><th>templates</th><td>{_e(', '.join(plan.templates))}</td></tr>
<tr><th>endpoints</th><td>{_e(', '.join(plan.endpoints))}</td></tr>
<tr><th>iterations</th><td>{plan.iterations}</td></tr>
<tr><th>seed</th><td>{plan.seed}</td></tr>
</table>
<table class="summary">
<tr><th>verdict</th><th>count</th></tr>
{totals}
<tr><th>total</th><td class="count">{len(report.results)}</td></tr>
</table>
<table class="results">
<thead><tr><th>#</th><th>template</th><th>iteration</th><th>channel</th><th>verdict</th><th>latency ms</th><th>detail</th></tr></thead>
<tbody>
{rows}
</tbody>
</table>
</body>
</html>
"""
    return page.encode("utf-8")


def write_report(report: TestReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``<run-id>.report.json`` and ``<run-id>.report.html`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / f"{report.run_id}.report.json"
    html_path = out / f"{report.run_id}.report.html"
    json_path.write_bytes(render_json(report))
    html_path.write_bytes(render_html(report))
    return json_path, html_path
