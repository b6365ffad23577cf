"""Text reports: readable ``key: value`` lines followed by a JSON block."""

import json
from pathlib import Path

from .experiment import ExperimentReport
from .workload import LATENCY_KEYS

BEGIN = "--- BEGIN REPORT JSON ---"
END = "--- END REPORT JSON ---"


def format_report(report):
    lines = [
        f"mode: {report.mode}",
        f"transport: {report.transport}",
        f"qps: {report.qps:.3f}",
        f"duration_s: {report.duration:.3f}",
        f"queries: {report.n_queries}",
    ]
    lines += [f"latency_{key}_ms: {report.latencies[key]:.4f}" for key in LATENCY_KEYS]
    lines += [
        f"tail_gap_ms: {report.gap:.4f}",
        f"exact: {report.exact_count}",
        f"reconstructed: {report.reconstructed_count}",
        f"default: {report.default_count}",
        f"duplicate_replies: {report.duplicate_replies}",
        f"accuracy_available: {report.accuracy.a_available:.6f}",
        f"accuracy_degraded: {report.accuracy.a_degraded:.6f}",
        f"fraction_unavailable: {report.accuracy.f_unavailable:.6f}",
        f"accuracy_overall: {report.accuracy.a_overall:.6f}",
    ]
    return "\n".join(lines)


def report_emit(report, path):
    text = "\n".join([format_report(report), BEGIN,
                      json.dumps(report.to_dict(), indent=2, sort_keys=True), END, ""])
    Path(path).write_text(text)


def parse_report(text):
    start = text.find(BEGIN)
    stop = text.find(END, start)
    if start < 0 or stop < 0:
        raise ValueError("no structured report block found")
    data = json.loads(text[start + len(BEGIN):stop])
    return ExperimentReport(**data)


def report_load(path):
    return parse_report(Path(path).read_text())
