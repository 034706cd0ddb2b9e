from __future__ import annotations

import heapq
import os

import pytest
from hypothesis import HealthCheck, settings

from beaconbft.beacon import MockBeacon
from beaconbft.consensus.replica import Note, ProtocolConfig, Replica, Send, SetTimer
from beaconbft.crypto import SigningKey, u64
from beaconbft.membership import Roster

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=50
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_keys(n: int, label: bytes = b"test") -> list[SigningKey]:
    return [SigningKey.derive(label, u64(i)) for i in range(n)]


def make_roster(keys) -> Roster:
    return Roster.from_keys(k.public_key for k in keys)


@pytest.fixture
def committee():
    """Four keys, their roster, and a lookup from node id to key."""
    keys = make_keys(4)
    roster = make_roster(keys)
    by_id = {k.public_key[:8].hex(): k for k in keys}
    return roster, by_id


class Network:
    """Zero-configuration harness: every message takes ``latency``, timers fire on time.

    ``drop`` filters (src, dst, msg) triples so a test can silence a node.
    """

    def __init__(self, n: int, latency: float = 0.1, config: ProtocolConfig | None = None, seed: int = 7, mempool=None):
        keys = make_keys(n, b"net")
        self.roster = make_roster(keys)
        by_id = {k.public_key[:8].hex(): k for k in keys}
        self.beacon = MockBeacon(seed)
        self.replicas = {
            nid: Replica(nid, by_id[nid], self.roster, self.beacon, config or ProtocolConfig(), mempool)
            for nid in self.roster.ids
        }
        self.latency = latency
        self.queue: list = []
        self.seq = 0
        self.now = 0.0
        self.notes: list[tuple[float, str, Note]] = []
        self.drop = lambda src, dst, msg: False
        self.down: set[str] = set()

    def _apply(self, nid: str, effects) -> None:
        for e in effects:
            self.seq += 1
            if isinstance(e, Send):
                if not self.drop(nid, e.dest, e.msg):
                    heapq.heappush(self.queue, (self.now + self.latency, self.seq, "msg", e.dest, e.msg))
            elif isinstance(e, SetTimer):
                heapq.heappush(self.queue, (e.at, self.seq, "timer", nid, e.timer))
            elif isinstance(e, Note):
                self.notes.append((self.now, nid, e))

    def start(self) -> None:
        for nid, r in self.replicas.items():
            if nid not in self.down:
                self._apply(nid, r.start(0.0))

    def run(self, until: float = 100.0, stop=None) -> None:
        while self.queue and self.queue[0][0] <= until:
            at, _, kind, nid, item = heapq.heappop(self.queue)
            self.now = at
            if nid in self.down:
                continue
            r = self.replicas[nid]
            effects = r.on_message(item, at) if kind == "msg" else r.on_timer(item, at)
            self._apply(nid, effects)
            if stop is not None and stop(self):
                return

    def events(self, name: str) -> list[tuple[float, str, Note]]:
        return [x for x in self.notes if x[2].event == name]


@pytest.fixture
def network():
    return Network
