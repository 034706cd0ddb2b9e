"""Post-hoc analysis of execution traces.

Everything here works from the trace alone (plus the roster it embeds), not
from replica self-reports.
"""

from __future__ import annotations

import bisect
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from scipy import stats

from ..consensus.certificates import verify_certificate
from ..consensus.types import QuorumCertificate
from ..membership import Roster
from .scenario import Scenario


def trace_roster(trace: Sequence[dict]) -> Roster:
    for ev in trace:
        if ev["event"] == "scenario":
            return Roster.from_json({"epoch": 0, "members": ev["roster"]})
    raise ValueError("trace has no scenario header")


def trace_scenario(trace: Sequence[dict]) -> Scenario:
    for ev in trace:
        if ev["event"] == "scenario":
            return Scenario.from_json(ev["scenario"])
    raise ValueError("trace has no scenario header")


class CorruptionTimeline:
    """Answers "was node i corrupt at time t" from corrupt/release events."""

    def __init__(self, trace: Iterable[dict]):
        self._changes: dict[int, list[tuple[float, bool]]] = defaultdict(list)
        for ev in trace:
            if ev["event"] in ("corrupt", "release"):
                self._changes[ev["target"]].append((ev["time"], ev["event"] == "corrupt"))

    def corrupt_at(self, node: int, t: float) -> bool:
        changes = self._changes.get(node)
        if not changes:
            return False
        times = [c[0] for c in changes]
        k = bisect.bisect_right(times, t)
        return k > 0 and changes[k - 1][1]

    def corrupt_during(self, node: int, t0: float, t1: float) -> bool:
        if self.corrupt_at(node, t0):
            return True
        return any(t0 <= t <= t1 and on for t, on in self._changes.get(node, ()))

    def ever_corrupt(self, node: int) -> bool:
        return any(on for _, on in self._changes.get(node, ()))


@dataclass(frozen=True)
class Violation:
    kind: str
    height: int | None
    detail: str


def check_safety(trace: Sequence[dict], roster: Roster | None = None) -> list[Violation]:
    """Forks among honest commits, and certificates that do not verify."""
    roster = roster or trace_roster(trace)
    corrupt = CorruptionTimeline(trace)
    violations: list[Violation] = []

    certified: dict[int, set[str]] = defaultdict(set)
    for ev in trace:
        if ev["event"] != "certificate":
            continue
        try:
            cert = QuorumCertificate.from_json(ev["cert"])
            ok = verify_certificate(cert, roster) and cert.block_digest.hex() == ev["digest"]
        except (KeyError, ValueError, TypeError):
            ok = False
        if not ok:
            violations.append(Violation("bad-certificate", ev.get("height"), f"certificate logged by node {ev['node']} does not verify"))
        else:
            certified[cert.height].add(ev["digest"])

    by_height: dict[int, dict[str, list[int]]] = defaultdict(lambda: defaultdict(list))
    for ev in trace:
        if ev["event"] == "commit" and not corrupt.corrupt_at(ev["node"], ev["time"]):
            by_height[ev["height"]][ev["digest"]].append(ev["node"])
    for h in sorted(by_height):
        digests = by_height[h]
        if len(digests) > 1:
            desc = ", ".join(f"{d[:12]} by {sorted(nodes)}" for d, nodes in sorted(digests.items()))
            violations.append(Violation("fork", h, f"conflicting commits at height {h}: {desc}"))
        for d, nodes in sorted(digests.items()):
            if d not in certified.get(h, ()):
                violations.append(Violation("uncertified", h, f"commit of {d[:12]} at height {h} has no verifying certificate"))
    return violations


@dataclass(frozen=True)
class ViewRecord:
    view: int
    start: float
    leader: int
    malicious: bool
    # first honest entry into the next recorded view
    end: float = float("inf")
    # first entry by any replica, corrupt ones included
    opened: float | None = None


def view_records(trace: Sequence[dict]) -> list[ViewRecord]:
    """One record per view, timed at the first honest entry."""
    corrupt = CorruptionTimeline(trace)
    ids = [m["id"] for m in next(ev for ev in trace if ev["event"] == "scenario")["roster"]]
    index = {nid: i for i, nid in enumerate(ids)}
    first: dict[int, tuple[float, int]] = {}
    opened: dict[int, float] = {}
    for ev in trace:
        if ev["event"] != "view":
            continue
        opened.setdefault(ev["view"], ev["time"])
        if corrupt.corrupt_at(ev["node"], ev["time"]):
            continue
        v = ev["view"]
        if v not in first:
            first[v] = (ev["time"], index[ev["leader"]])
    views = sorted(first.items())
    out = []
    for k, (v, (t, leader)) in enumerate(views):
        end = views[k + 1][1][0] if k + 1 < len(views) else float("inf")
        out.append(ViewRecord(v, t, leader, corrupt.corrupt_at(leader, t), end, opened[v]))
    return out


@dataclass(frozen=True)
class Stall:
    view: int
    leader: int
    nodes: tuple[int, ...]


def check_liveness(trace: Sequence[dict], scenario: Scenario | None = None) -> list[Stall]:
    """Honest-leader views entered after GST that did not commit in time.

    A view counts as honest-led only if its leader stays uncorrupted from the
    moment any replica enters it until the next view begins.  It stalls if no honest replica commits a block
    certified in that view, or if an honest replica timed out of the view
    before the first such commit.
    """
    scenario = scenario or trace_scenario(trace)
    corrupt = CorruptionTimeline(trace)
    records = view_records(trace)
    first_commit: dict[int, float] = {}
    timeouts: dict[int, list[tuple[float, int]]] = defaultdict(list)
    for ev in trace:
        if ev.get("injected") or ev["node"] is None or corrupt.corrupt_at(ev["node"], ev["time"]):
            continue
        if ev["event"] == "commit":
            first_commit.setdefault(ev["view"], ev["time"])
        elif ev["event"] == "timeout":
            timeouts[ev["view"]].append((ev["time"], ev["node"]))
    last_view = max((r.view for r in records), default=-1)
    stalls = []
    for rec in records:
        v = rec.view
        if rec.start < scenario.gst or corrupt.corrupt_during(rec.leader, min(rec.opened, rec.start), rec.end):
            continue
        done = first_commit.get(v)
        if done is None:
            if v == last_view and not timeouts.get(v):
                continue  # run ended while this view was in flight
            stalls.append(Stall(v, rec.leader, tuple(sorted({n for _, n in timeouts.get(v, ())}))))
            continue
        early = sorted({n for t, n in timeouts.get(v, ()) if t < done})
        if early:
            stalls.append(Stall(v, rec.leader, tuple(early)))
    return stalls


@dataclass
class FairnessReport:
    views: int
    frequencies: list[float]
    chi2: float | None
    dof: int
    p_value: float | None
    underpowered: bool
    malicious_views: int = 0
    malicious_fraction: float = 0.0

    def to_json(self) -> dict:
        return self.__dict__.copy()


def fairness_report(
    trace: Sequence[dict], roster: Roster | None = None, min_views: int = 1000
) -> FairnessReport:
    roster = roster or trace_roster(trace)
    records = view_records(trace)
    n = len(roster)
    counts = Counter(r.leader for r in records)
    total = len(records)
    freqs = [counts.get(i, 0) / total if total else 0.0 for i in range(n)]
    mal = sum(r.malicious for r in records)
    underpowered = total < min_views
    chi2 = p = None
    if n > 1 and total and not underpowered:
        observed = [counts.get(i, 0) for i in range(n)]
        res = stats.chisquare(observed)
        chi2, p = float(res.statistic), float(res.pvalue)
    return FairnessReport(total, freqs, chi2, max(n - 1, 0), p, underpowered, mal, mal / total if total else 0.0)


def streak_windows(flags: Sequence[bool], d: int) -> int:
    """Number of positions starting a run of ``d`` consecutive True values."""
    run = 0
    hits = 0
    for x in flags:
        run = run + 1 if x else 0
        if run >= d:
            hits += 1
    return hits


def maximal_streaks(flags: Sequence[bool]) -> Counter:
    """Histogram of maximal run lengths of True."""
    hist: Counter = Counter()
    run = 0
    for x in list(flags) + [False]:
        if x:
            run += 1
        elif run:
            hist[run] += 1
            run = 0
    return hist


def window_count_moments(p: float, d: int, views: int) -> tuple[float, float]:
    """Mean and standard deviation of ``streak_windows`` for i.i.d. Bernoulli(p) flags.

    Windows overlap, so neighbouring indicators are positively correlated;
    the covariance of two windows ``k`` apart (``k < d``) is p^(d+k) - p^(2d).
    """
    m = views - d + 1
    if m <= 0:
        return 0.0, 0.0
    q = p**d
    var = m * q * (1 - q)
    for k in range(1, d):
        if m - k > 0:
            var += 2 * (m - k) * (p ** (d + k) - p ** (2 * d))
    return m * q, math.sqrt(max(var, 0.0))


@dataclass
class StreakCheck:
    d: int
    observed: int
    expected: float
    sigma: float
    binomial_sigma: float

    @property
    def z(self) -> float:
        return (self.observed - self.expected) / self.sigma if self.sigma else 0.0

    @property
    def within_3sigma(self) -> bool:
        return abs(self.observed - self.expected) <= 3 * self.sigma


def streak_checks(flags: Sequence[bool], p: float, ds: Iterable[int] = (1, 2, 3)) -> list[StreakCheck]:
    out = []
    for d in ds:
        mean, sd = window_count_moments(p, d, len(flags))
        m = max(len(flags) - d + 1, 0)
        bsd = math.sqrt(m * p**d * (1 - p**d))
        out.append(StreakCheck(d, streak_windows(flags, d), mean, sd, bsd))
    return out
