"""Metrics derived from a finished simulation."""

from __future__ import annotations

import csv
import gzip
import io
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checks import (
    CorruptionTimeline,
    check_liveness,
    check_safety,
    maximal_streaks,
    trace_roster,
    trace_scenario,
    view_records,
)
from .engine import SimResult, simulate
from .scenario import Scenario


@dataclass
class Metrics:
    commits: int = 0
    honest_min_height: int = 0
    latency_mean: float | None = None
    latency_p50: float | None = None
    latency_p95: float | None = None
    latency_max: float | None = None
    leader_histogram: list[int] = field(default_factory=list)
    malicious_streak_histogram: dict[str, int] = field(default_factory=dict)
    safety_violations: int = 0
    liveness_stalls: int = 0
    messages: int = 0
    views: int = 0
    malicious_leader_views: int = 0
    transactions: int = 0
    empty_blocks: int = 0
    end_time: float = 0.0
    max_post_gst_honest_delay: float = 0.0
    stop_reason: str = ""

    CSV_FIELDS = (
        "commits",
        "honest_min_height",
        "latency_mean",
        "latency_p50",
        "latency_p95",
        "latency_max",
        "safety_violations",
        "liveness_stalls",
        "messages",
        "views",
        "malicious_leader_views",
        "transactions",
        "empty_blocks",
        "end_time",
        "max_post_gst_honest_delay",
        "stop_reason",
    )

    def to_json(self) -> dict:
        return asdict(self)


def commit_latencies(trace: Sequence[dict]) -> list[float]:
    """Per honest commit: time since the committing view's proposal was sent."""
    corrupt = CorruptionTimeline(trace)
    proposed: dict[tuple[str, int], float] = {}
    for ev in trace:
        if ev["event"] == "propose":
            proposed.setdefault((ev["digest"], ev["view"]), ev["time"])
    out = []
    for ev in trace:
        if ev["event"] == "commit" and not ev.get("injected") and not corrupt.corrupt_at(ev["node"], ev["time"]):
            t0 = proposed.get((ev["digest"], ev["view"]))
            if t0 is not None:
                out.append(ev["time"] - t0)
    return out


def compute_metrics(result: SimResult) -> Metrics:
    return metrics_from_trace(result.trace)


def metrics_from_trace(trace: Sequence[dict]) -> Metrics:
    """Everything is recomputed from the trace; the closing event carries network counters."""
    sc = trace_scenario(trace)
    end = next((ev for ev in reversed(trace) if ev["event"] == "end"), {})
    end_time = end.get("time", trace[-1]["time"] if trace else 0.0)
    corrupt = CorruptionTimeline(trace)
    lat = commit_latencies(trace)
    records = view_records(trace)
    hist = Counter(r.leader for r in records)

    heights: dict[int, int] = {}
    commits = set()
    empty = 0
    txs = 0
    for ev in trace:
        if ev["event"] != "commit" or ev.get("injected"):
            continue
        commits.add(ev["height"])
        heights[ev["node"]] = max(heights.get(ev["node"], 0), ev["height"] + 1)
    seen = set()
    for ev in trace:
        if ev["event"] == "commit" and not ev.get("injected") and ev["height"] not in seen:
            seen.add(ev["height"])
            txs += ev.get("txs", 0)
            empty += ev.get("txs", 0) == 0
    honest_final = [heights.get(i, 0) for i in range(sc.n) if not corrupt.corrupt_at(i, end_time)]
    streaks = maximal_streaks([r.malicious for r in records])
    m = Metrics(
        commits=len(commits),
        honest_min_height=min(honest_final) if honest_final else 0,
        leader_histogram=[hist.get(i, 0) for i in range(sc.n)],
        malicious_streak_histogram={str(k): v for k, v in sorted(streaks.items())},
        safety_violations=len(check_safety(trace, trace_roster(trace))),
        liveness_stalls=len(check_liveness(trace, sc)),
        messages=end.get("messages", 0),
        views=len(records),
        malicious_leader_views=sum(r.malicious for r in records),
        transactions=txs,
        empty_blocks=empty,
        end_time=end_time,
        max_post_gst_honest_delay=end.get("max_post_gst_honest_delay", 0.0),
        stop_reason=end.get("stop_reason", ""),
    )
    if lat:
        arr = np.asarray(lat)
        m.latency_mean = float(arr.mean())
        m.latency_p50 = float(np.percentile(arr, 50))
        m.latency_p95 = float(np.percentile(arr, 95))
        m.latency_max = float(arr.max())
    return m


def run(scenario: Scenario) -> tuple[Metrics, list[dict]]:
    result = simulate(scenario)
    return compute_metrics(result), result.trace


def trace_lines(trace: Sequence[dict]) -> str:
    return "".join(json.dumps(ev, sort_keys=True, separators=(",", ":")) + "\n" for ev in trace)


def write_trace(trace: Sequence[dict], path: Path, compress: bool = False) -> Path:
    data = trace_lines(trace).encode()
    if compress:
        path = path.with_suffix(path.suffix + ".gz")
        # name and mtime pinned so the archive depends on the trace alone
        with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
            fh.write(data)
    else:
        path.write_bytes(data)
    return path


def read_trace(path: Path) -> list[dict]:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rt") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def metrics_csv(rows: Sequence[dict], extra_fields: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    cols = list(extra_fields) + list(Metrics.CSV_FIELDS)
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
