"""Single-threaded discrete-event execution of a scenario."""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from ..beacon import MockBeacon, ThresholdBeacon
from ..consensus.replica import Note, ProtocolConfig, Replica, Send, SetTimer, Timer
from ..consensus.types import Proposal
from ..crypto import H, SigningKey, u64
from ..membership import Issuer, Roster, advance_epoch, issue_credential
from .adversary import Behaviour, adversary_step, initial_state
from .scenario import Backend, Policy, Scenario

_MSG, _TIMER = 0, 1


def tx(i: int) -> bytes:
    return b"tx" + u64(i)


def _derive_seed(seed: int, label: bytes) -> int:
    return int.from_bytes(H(b"beaconbft/sim", u64(seed), label)[:8], "big")


def build_roster(scenario: Scenario) -> tuple[Roster, dict[str, SigningKey], Issuer]:
    """Admit every simulated node through the credential path."""
    issuer = Issuer.create("sim-issuer", H(b"issuer", u64(scenario.seed)))
    keys = [SigningKey.derive(b"node", u64(scenario.seed), u64(i)) for i in range(scenario.n)]
    creds = [
        issue_credential(issuer, b"identity-" + u64(scenario.seed) + u64(i), k.public_key)
        for i, k in enumerate(keys)
    ]
    roster, report = advance_epoch(Roster(), creds, [], {issuer.issuer_id: issuer.verification_key})
    if report.rejected:
        raise RuntimeError(f"simulated admission failed: {report.rejected}")
    by_id = {k.public_key[:8].hex(): k for k in keys}
    return roster, by_id, issuer


class _Mempool:
    """Deterministic transaction stream: tx ``i`` arrives at ``i / rate``."""

    def __init__(self, rate_per_delta: float, delta: float, cap: int):
        self.rate = rate_per_delta / delta
        self.cap = cap
        self.cursor: dict[str, int] = {}

    def __call__(self, replica: Replica, now: float) -> list[bytes]:
        arrived = int(now * self.rate) + 1
        i = self.cursor.get(replica.id, 0)
        committed = replica.committed_txs
        while i < arrived and tx(i) in committed:
            i += 1
        self.cursor[replica.id] = i
        out = []
        while i < arrived and len(out) < self.cap:
            t = tx(i)
            if t not in committed:
                out.append(t)
            i += 1
        return out


@dataclass
class SimResult:
    scenario: Scenario
    roster: Roster
    trace: list[dict]
    messages: int
    max_post_gst_honest_delay: float
    end_time: float
    stop_reason: str
    corrupt_timeline: list[tuple[float, str, int]] = field(default_factory=list)


class Simulation:
    def __init__(self, scenario: Scenario):
        scenario.validate()
        self.sc = scenario
        self.roster, self.keys, _ = build_roster(scenario)
        self.ids = list(self.roster.ids)
        self.index = {nid: i for i, nid in enumerate(self.ids)}
        if scenario.beacon_backend == Backend.THRESHOLD:
            self.beacon = ThresholdBeacon.from_seed(
                scenario.beacon_n, scenario.beacon_t, _derive_seed(scenario.seed, b"beacon")
            )
        else:
            self.beacon = MockBeacon(_derive_seed(scenario.seed, b"beacon"))
        cfg = ProtocolConfig(
            delta=scenario.delta,
            timeout_base=scenario.timeout_base,
            branching=scenario.branching,
            block_cap=scenario.block_cap,
        )
        mempool = _Mempool(scenario.tx_rate, scenario.delta, scenario.block_cap)
        self.replicas = [Replica(nid, self.keys[nid], self.roster, self.beacon, cfg, mempool) for nid in self.ids]
        self.net_rng = random.Random(_derive_seed(scenario.seed, b"network"))
        self.adv_rng = random.Random(_derive_seed(scenario.seed, b"adversary"))
        self.behaviour = Behaviour(scenario.adversary_policy, self.keys)
        self.adv = initial_state(scenario.f, scenario.n, self.adv_rng, scenario.initial_corrupt)
        self.queue: list = []
        self.seq = 0
        self.trace: list[dict] = []
        self.messages = 0
        self.max_delay = 0.0
        self.round_ended = -1
        self.now = 0.0
        self.timeline: list[tuple[float, str, int]] = []

    # -- scheduling ---------------------------------------------------------

    def _push(self, at: float, kind: int, node: int, item) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (at, self.seq, kind, node, item))

    def _delay(self, src: int, dst: int) -> float:
        sc, rng = self.sc, self.net_rng
        corrupt_src = src in self.adv.corrupt_set
        if self.now < sc.gst:
            if sc.adversary_policy == Policy.DELAY_MAX and (corrupt_src or rng.random() < 0.5):
                d = sc.cap
            else:
                d = rng.uniform(0.0, sc.cap)
            if corrupt_src:
                return d
            # honest traffic sent before GST is delivered by GST + delta at the latest
            return min(d, sc.gst + sc.delta - self.now)
        if sc.adversary_policy == Policy.DELAY_MAX:
            return sc.cap if corrupt_src else sc.delta
        return rng.uniform(0.0, sc.delta)

    def _record(self, node: int, note: Note) -> None:
        ev = {
            "time": self.now,
            "node": node,
            "event": note.event,
            "height": note.height,
            "view": note.view,
            "digest": note.digest.hex() if note.digest is not None else None,
        }
        if note.extra:
            ev.update(note.extra)
        self.trace.append(ev)

    def _meta(self, event: str, **fields) -> None:
        ev = {"time": self.now, "node": None, "event": event, "height": None, "view": None, "digest": None}
        ev.update(fields)
        self.trace.append(ev)

    def _apply(self, node: int, effects) -> None:
        sends: list[tuple[str, object]] = []
        for eff in effects:
            if isinstance(eff, Send):
                sends.append((eff.dest, eff.msg))
            elif isinstance(eff, SetTimer):
                self._push(eff.at, _TIMER, node, eff.timer)
            elif isinstance(eff, Note):
                self._record(node, eff)
                if eff.event == "commit":
                    self._on_commit(node, eff)
        if not sends:
            return
        sender = self.ids[node]
        if node in self.adv.corrupt_set:
            sends, minted = self.behaviour.outbound(sender, sends)
            for blk in minted:
                for c in self.adv.corrupt_set:
                    self.replicas[c].blocks.setdefault(blk.digest, blk)
        for dest, msg in sends:
            dst = self.index[dest]
            d = self._delay(node, dst)
            if self.now >= self.sc.gst and node not in self.adv.corrupt_set and dst not in self.adv.corrupt_set:
                self.max_delay = max(self.max_delay, d)
            self.messages += 1
            self._push(self.now + d, _MSG, dst, msg)

    # -- adversary ----------------------------------------------------------

    def _set_corrupt(self, node: int, on: bool) -> None:
        r = self.replicas[node]
        if self.sc.adversary_policy == Policy.CENSOR:
            r.censor = on
        self.timeline.append((self.now, "corrupt" if on else "release", node))
        self._meta("corrupt" if on else "release", target=node)
        if not on and self.sc.adversary_policy == Policy.CRASH:
            # it stopped reacting while crashed; restart its view timer
            r._progress(self.now)
            self._apply(node, r._drain())

    def _on_commit(self, node: int, note: Note) -> None:
        if node in self.adv.corrupt_set or note.height <= self.round_ended:
            return
        for r in range(self.round_ended + 1, note.height + 1):
            self.round_ended = r
            self._meta("round_end", round=r)
            tgt = None
            if self.sc.target == "leader":
                tgt = self.index[self.replicas[node].leader_of(note.view)]
            res = adversary_step(self.adv, r, self.adv_rng, self.sc.n, self.sc.adaptive, tgt)
            self.adv = res.state
            # activations first: a node can activate and be released in one step
            for x in res.activated:
                self._set_corrupt(x, True)
            for x in res.released:
                self._set_corrupt(x, False)
            for x in res.chosen:
                self._meta("choose", target=x, activates_at_round=r + 1)

    # -- main loop ----------------------------------------------------------

    def _done(self) -> bool:
        target = self.sc.rounds
        return all(
            r.height >= target for i, r in enumerate(self.replicas) if i not in self.adv.corrupt_set
        )

    def run(self) -> SimResult:
        sc = self.sc
        self._meta(
            "scenario",
            scenario=sc.to_json(),
            roster=[{"id": m.node_id, "pubkey_hex": m.public_key.hex()} for m in self.roster.members],
        )
        for x in sorted(self.adv.corrupt_set):
            self._set_corrupt(x, True)
        for i, r in enumerate(self.replicas):
            self.now = 0.0
            self._apply(i, r.start(0.0))

        max_time = sc.max_time if sc.max_time is not None else float("inf")
        max_views = sc.max_views if sc.max_views is not None else 50 * sc.rounds + 200
        stop = "drained"
        crash = sc.adversary_policy == Policy.CRASH
        while self.queue:
            at, _, kind, node, item = heapq.heappop(self.queue)
            if at > max_time:
                stop = "max_time"
                break
            self.now = at
            if crash and node in self.adv.corrupt_set:
                continue
            r = self.replicas[node]
            if kind == _MSG:
                effects = r.on_message(item, at)
            else:
                effects = r.on_timer(item, at)
            self._apply(node, effects)
            if self._done():
                stop = "rounds"
                break
            if r.view > max_views:
                stop = "max_views"
                break

        if sc.inject_fault == "fork":
            self._inject_fork()
        self._meta(
            "end",
            messages=self.messages,
            max_post_gst_honest_delay=self.max_delay,
            stop_reason=stop,
        )
        return SimResult(sc, self.roster, self.trace, self.messages, self.max_delay, self.now, stop, self.timeline)

    def _inject_fork(self) -> None:
        honest = [i for i in range(self.sc.n) if i not in self.adv.corrupt_set]
        if not honest:
            return
        self._meta("fault_injection", kind="fork")
        self.trace.append(
            {
                "time": self.now,
                "node": honest[-1],
                "event": "commit",
                "height": 0,
                "view": 0,
                "digest": H(b"forged block").hex(),
                "injected": True,
            }
        )


def simulate(scenario: Scenario) -> SimResult:
    return Simulation(scenario).run()
