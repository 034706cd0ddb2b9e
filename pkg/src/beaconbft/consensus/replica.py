"""Replica state machine.

A replica never reads a clock or touches a socket: every input (message,
timer firing) carries the current time, and every reaction comes back as a
list of effects (sends, timers, trace notes) for the caller to schedule.

Per view the flow is

    leader --Proposal--> subleaders --> leaves
    leaves --Prepare--> subleader --VoteBatch--> leader
    leader --Certified(prepare)--> tree          (replicas lock, vote Commit)
    leaves --Commit--> subleader --VoteBatch--> leader
    leader --Certified(commit)--> tree           (replicas append to log)

A replica locks on a block once it sees a prepare certificate for it and only
votes for a different block at that height if the proposal carries a
prepare certificate from a later view.  On timeout it sends a ViewChange
with its lock to the next beacon-elected leader, which waits for a quorum
of them, re-proposes the highest lock it learned of, and attaches the
ViewChange messages as proof that the view was entered legitimately.  A
lock taken after the timeout is reported to that leader with a fresh
ViewChange.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, NamedTuple, Sequence

from ..crypto import SigningKey, verify_signature
from ..membership import Roster
from .certificates import sign_vote, verify_certificate, verify_prepare, verify_vote
from .election import CommTree, build_tree, default_branching
from .types import (
    GENESIS_DIGEST,
    BlockProposal,
    Certified,
    Phase,
    Proposal,
    Pull,
    QuorumCertificate,
    Vote,
    VoteBatch,
    ViewChange,
    proposal_message,
)


# committed blocks returned per Pull from a lagging replica
SYNC_BATCH = 16


class NotLeader(Exception):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    delta: float = 1.0
    # None means 4 delta for a flat tree, 16 delta for a two-level tree
    timeout_base: float | None = None
    branching: int | None = None
    block_cap: int = 1000
    max_backoff: int = 16
    # leader wait after a view-change quorum, to hear about higher locks
    grace: float | None = None
    # subleader wait for its children's votes before sending a partial batch
    batch_wait: float | None = None


class Send(NamedTuple):
    dest: str
    msg: Any


class SetTimer(NamedTuple):
    at: float
    timer: "Timer"


class Note(NamedTuple):
    event: str
    height: int
    view: int
    digest: bytes | None = None
    extra: dict | None = None


@dataclass(frozen=True)
class Timer:
    kind: str  # "view" | "fallback" | "grace" | "flush" | "straggle" | "propose"
    view: int
    stamp: int = 0
    phase: int = 0


Effect = Send | SetTimer | Note


@dataclass
class Lock:
    cert: QuorumCertificate
    block: BlockProposal | None

    @property
    def view(self) -> int:
        return self.cert.view

    @property
    def digest(self) -> bytes:
        return self.cert.block_digest


def _lock_view(vc: ViewChange) -> int:
    return -1 if vc.lock is None else vc.lock.view


class Replica:
    def __init__(
        self,
        node_id: str,
        key: SigningKey,
        roster: Roster,
        beacon,
        config: ProtocolConfig | None = None,
        mempool: Callable[["Replica", float], Sequence[bytes]] | None = None,
    ):
        self.id = node_id
        self.key = key
        self.roster = roster
        self.beacon = beacon
        self.cfg = config or ProtocolConfig()
        self.mempool_fn = mempool
        self.g = self.cfg.branching or default_branching(len(roster))
        depth = 1 if self.g >= len(roster) - 1 else 2
        # Flat: every hop is one delta, 4 delta covers a round trip plus slack.
        # Two levels: a leaf under a dead subleader notices at half a timeout
        # and needs ~6 delta more to catch up and fan the certificate out.
        default_base = 4.0 if depth == 1 else 16.0
        self.timeout_base = self.cfg.timeout_base or default_base * self.cfg.delta
        self.grace = 2.0 * self.cfg.delta if self.cfg.grace is None else self.cfg.grace
        self.batch_wait = 2.0 * self.cfg.delta if self.cfg.batch_wait is None else self.cfg.batch_wait
        # behaviour switches set by an adversary controlling this replica
        self.censor = False

        self.height = 0
        self.view = 0
        self.height_first_view = 0
        self.log: list[tuple[BlockProposal, QuorumCertificate]] = []
        self.tip = GENESIS_DIGEST
        self.committed_txs: set[bytes] = set()
        self.lock: Lock | None = None
        self.deadline = 0.0
        self.progress_stamp = 0

        self.blocks: dict[bytes, BlockProposal] = {}
        self.proposals: dict[int, Proposal] = {}
        self.equivocated: set[int] = set()
        self.flagged_leaders: set[str] = set()
        self.prepare_voted: dict[int, bytes] = {}
        self.commit_voted: set[int] = set()
        self.my_votes: dict[tuple[int, int], Vote] = {}
        self.votes: dict[tuple, dict[str, Vote]] = {}
        self.certified: dict[tuple[int, int], Certified] = {}
        self.forwarded: set[tuple] = set()
        self.view_changes: dict[int, dict[str, ViewChange]] = {}
        self.vc_high: dict[str, int] = {}
        self.vc_sent: set[int] = set()
        self.sync_asked: set[tuple[str, int]] = set()
        self.sync_source: str | None = None
        self.proposed: set[int] = set()
        self.grace_armed: set[int] = set()
        self.batches: dict[tuple[int, int], dict[str, Vote]] = {}
        self.flushed: set[tuple[int, int]] = set()
        self.direct: dict[int, set[str]] = {}
        self.direct_mode: set[int] = set()
        self.pending_commits: dict[int, tuple[BlockProposal, QuorumCertificate]] = {}
        self._leaders: dict[int, str] = {}
        self._trees: dict[int, CommTree] = {}
        self._out: list[Effect] = []

    # -- topology ---------------------------------------------------------

    def leader_of(self, view: int) -> str:
        leader = self._leaders.get(view)
        if leader is None:
            leader = self.tree(view).leader
            self._leaders[view] = leader
        return leader

    def tree(self, view: int) -> CommTree:
        tree = self._trees.get(view)
        if tree is None:
            if len(self._trees) > 64:
                self._trees.clear()
                self._leaders.clear()
            rnd = self.beacon.output(view).randomness
            tree = self._trees[view] = build_tree(rnd, view, self.roster, self.g)
        return tree

    def is_leader(self, view: int | None = None) -> bool:
        return self.leader_of(self.view if view is None else view) == self.id

    def phase_timeout(self) -> float:
        k = min(max(self.view - self.height_first_view, 0), self.cfg.max_backoff)
        return self.timeout_base * (2**k)

    # -- effect helpers ---------------------------------------------------

    def _send(self, dest: str, msg) -> None:
        self._out.append(Send(dest, msg))

    def _note(self, event: str, digest: bytes | None = None, extra: dict | None = None, view=None, height=None):
        self._out.append(
            Note(event, self.height if height is None else height, self.view if view is None else view, digest, extra)
        )

    def _drain(self) -> list[Effect]:
        out, self._out = self._out, []
        return out

    def _progress(self, now: float) -> None:
        self.progress_stamp += 1
        self.deadline = now + self.phase_timeout()
        self._out.append(SetTimer(self.deadline, Timer("view", self.view)))
        if not self.is_leader():
            half = now + self.phase_timeout() / 2
            self._out.append(SetTimer(half, Timer("fallback", self.view, self.progress_stamp)))

    # -- public entry points ----------------------------------------------

    def start(self, now: float = 0.0) -> list[Effect]:
        self._enter_view(0, now)
        return self._drain()

    def on_message(self, msg, now: float) -> list[Effect]:
        if isinstance(msg, Proposal):
            self._on_proposal(msg, now)
        elif isinstance(msg, Vote):
            self._on_vote(msg, now)
        elif isinstance(msg, VoteBatch):
            for v in msg.votes:
                self._add_vote(v, now)
        elif isinstance(msg, Certified):
            self._on_certified(msg, now)
        elif isinstance(msg, ViewChange):
            self._on_view_change(msg, now)
        elif isinstance(msg, Pull):
            self._on_pull(msg, now)
        else:
            self._note("drop", extra={"reason": f"unknown message {type(msg).__name__}"})
        return self._drain()

    def on_timer(self, timer: Timer, now: float) -> list[Effect]:
        if timer.view == self.view:
            if timer.kind == "view" and now >= self.deadline:
                self._view_change(now)
            elif timer.kind == "fallback" and timer.stamp == self.progress_stamp:
                self._fallback(now)
            elif timer.kind == "grace":
                self._propose_after_view_change(now)
            elif timer.kind == "straggle":
                self._straggle(Phase(timer.phase), timer.view)
            elif timer.kind == "propose" and self.view not in self.proposed:
                self._propose_fresh(now)
        if timer.kind == "flush":
            self._flush(Phase(timer.phase), timer.view)
        return self._drain()

    # -- views --------------------------------------------------------------

    def _enter_view(self, view: int, now: float, defer: bool = False) -> None:
        if view < self.view:
            return
        self.view = view
        self._note("view", extra={"leader": self.leader_of(view)})
        self._progress(now)
        self._maybe_propose(now, defer)

    def _maybe_propose(self, now: float, defer: bool = False) -> None:
        if not self.is_leader() or self.view in self.proposed:
            return
        # a fresh proposal is justified by the parent's commit certificate only
        # in the view right after it; later views need a view-change quorum
        if self.view == self.height_first_view:
            if defer:
                # after a commit, propose from a fresh call stack: a committee
                # that certifies on its own would otherwise recurse per height
                self._out.append(SetTimer(now, Timer("propose", self.view)))
            else:
                self._propose_fresh(now)
        elif len(self.view_changes.get(self.view, ())) >= self.roster.quorum:
            self._arm_grace(now)

    def view_change(self, now: float) -> list[Effect]:
        """Abandon the current view: report our lock to the next leader and move on."""
        self._view_change(now)
        return self._drain()

    def _view_change(self, now: float, target: int | None = None) -> None:
        """Broadcast a signed ViewChange for ``target`` (default: the next view).

        We stay in the current view until a quorum asks for ``target``, so a
        replica whose timer runs early cannot race ahead of everyone else.
        """
        if target is None:
            target = self.view + 1
            if target in self.vc_sent:
                return
            self._note("timeout")
        if target in self.vc_sent:
            return
        self.vc_sent.add(target)
        self._send_view_change(target, self.roster.ids, now)

    def _send_view_change(self, target: int, dests: Sequence[str], now: float) -> None:
        high = self.log[-1] if self.log else None
        lock_cert = self.lock.cert if self.lock else None
        lock_block = self.lock.block if self.lock else None
        vc = ViewChange(self.id, target, self.height, b"", lock_cert, lock_block, high)
        vc = ViewChange(
            self.id, target, self.height, self.key.sign(vc.message), lock_cert, lock_block, high
        )
        for node in dests:
            if node != self.id:
                self._send(node, vc)
        self._on_view_change(vc, now)

    def _report_late_lock(self, now: float) -> None:
        # we locked after asking for a later view; that leader must hear of the
        # lock before proposing, or its fresh block would be refused by us
        for target in sorted(t for t in self.vc_sent if t > self.view):
            self._send_view_change(target, (self.leader_of(target),), now)

    def _valid_view_change(self, vc: ViewChange) -> bool:
        key = self.roster.key_of(vc.sender)
        if key is None or not verify_signature(key, vc.message, vc.signature):
            return False
        if vc.lock is not None:
            if vc.lock.height != vc.height or not verify_prepare(vc.lock, self.roster):
                return False
            if vc.lock_block is not None and vc.lock_block.digest != vc.lock.block_digest:
                return False
        return True

    def _on_view_change(self, vc: ViewChange, now: float) -> None:
        if vc.sender != self.id and not self._valid_view_change(vc):
            self._note("drop", extra={"reason": "bad view-change", "from": vc.sender})
            return
        if vc.high_commit is not None:
            self._catch_up(*vc.high_commit, now, source=vc.sender)
        if vc.view < self.view:
            return
        if vc.view > self.vc_high.get(vc.sender, -1):
            self.vc_high[vc.sender] = vc.view
        bucket = self.view_changes.setdefault(vc.view, {})
        known = bucket.get(vc.sender)
        if known is None or _lock_view(vc) > _lock_view(known):
            bucket[vc.sender] = vc
        # f+1 replicas are past our view, so at least one honest one is:
        # ask for the highest view that f+1 of them have asked for
        ahead = sorted((v for v in self.vc_high.values() if v > self.view), reverse=True)
        k = self.roster.fault_bound + 1
        if len(ahead) >= k and ahead[k - 1] not in self.vc_sent:
            self._view_change(now, ahead[k - 1])
        if len(bucket) < self.roster.quorum:
            return
        if vc.view > self.view:
            self._enter_view(vc.view, now)
        elif vc.view == self.view and self.is_leader() and vc.view not in self.proposed:
            self._arm_grace(now)

    def _arm_grace(self, now: float) -> None:
        if self.view in self.grace_armed:
            return
        self.grace_armed.add(self.view)
        if self.grace <= 0:
            self._propose_after_view_change(now)
        else:
            self._out.append(SetTimer(now + self.grace, Timer("grace", self.view)))

    def _propose_after_view_change(self, now: float) -> None:
        if self.view in self.proposed or not self.is_leader():
            return
        vcs = self.view_changes.get(self.view, {})
        if len(vcs) < self.roster.quorum:
            return
        best = self.lock
        for vc in vcs.values():
            if vc.lock is None or vc.lock.height != self.height:
                continue
            block = vc.lock_block or self.blocks.get(vc.lock.block_digest)
            if block is None:
                continue
            if best is None or vc.lock.view > best.view or (best.block is None and vc.lock.view == best.view):
                best = Lock(vc.lock, block)
        if best is not None and best.block is None:
            best.block = self.blocks.get(best.digest)
        proof = tuple(vcs[s] for s in sorted(vcs))
        if best is not None and best.block is not None:
            self._broadcast_proposal(best.block, now, justify=best.cert, view_proof=proof)
        else:
            self._propose_fresh(now, view_proof=proof)

    # -- proposing ----------------------------------------------------------

    def propose(self, mempool: Sequence[bytes]) -> BlockProposal:
        """Block for the current (height, view) built from a canonical mempool prefix."""
        if not self.is_leader():
            raise NotLeader(f"{self.id} is not the leader of view {self.view}")
        if self.censor:
            payload: tuple[bytes, ...] = ()
        else:
            fresh = sorted({tx for tx in mempool if tx not in self.committed_txs})
            payload = tuple(fresh[: self.cfg.block_cap])
        return BlockProposal(self.height, self.view, self.tip, payload, self.id)

    def _propose_fresh(self, now: float, view_proof: tuple[ViewChange, ...] = ()) -> None:
        mempool = self.mempool_fn(self, now) if self.mempool_fn else ()
        block = self.propose(mempool)
        self._broadcast_proposal(block, now, view_proof=view_proof)

    def _broadcast_proposal(self, block, now, justify=None, view_proof=()) -> None:
        self.proposed.add(self.view)
        parent = self.log[-1] if self.log else None
        sig = self.key.sign(proposal_message(block.digest, self.view))
        p = Proposal(self.id, self.view, block, sig, justify, parent, view_proof)
        self._note("propose", block.digest, {"txs": len(block.payload), "reproposal": justify is not None})
        for child in self.tree(self.view).subleaders:
            self._send(child, p)
        for node in sorted(self.direct.get(self.view, ())):
            self._send(node, p)
        self._arm_straggle(Phase.PREPARE, now)
        self._on_proposal(p, now)

    # -- proposal handling ------------------------------------------------

    def _justified_entry(self, p: Proposal) -> bool:
        if p.parent is not None and p.parent[1].view == p.view - 1:
            return True
        senders = set()
        for vc in p.view_proof:
            if vc.view == p.view and vc.sender not in senders and self._valid_view_change(vc):
                senders.add(vc.sender)
        return len(senders) >= self.roster.quorum

    def _on_proposal(self, p: Proposal, now: float) -> None:
        if p.parent is not None:
            self._catch_up(*p.parent, now, source=p.sender)
        block = p.block
        if block.height != self.height or p.view < self.view:
            return
        if p.sender != self.leader_of(p.view):
            self._note("drop", extra={"reason": "proposal from non-leader", "from": p.sender})
            return
        key = self.roster.key_of(p.sender)
        if p.sender != self.id and not verify_signature(key, proposal_message(block.digest, p.view), p.signature):
            self._note("drop", extra={"reason": "bad proposal signature", "from": p.sender})
            return
        if block.parent_digest != self.tip:
            return
        if p.view > self.view:
            if not self._justified_entry(p):
                return
            self._enter_view(p.view, now)

        known = self.proposals.get(p.view)
        if known is not None:
            if p.direct and known.block.digest == block.digest:
                self._go_direct(p.view)
            if known.block.digest != block.digest and p.view not in self.equivocated:
                self.equivocated.add(p.view)
                self.flagged_leaders.add(p.sender)
                self._note("equivocation", block.digest, {"leader": p.sender})
            return
        self.proposals[p.view] = p
        self.blocks[block.digest] = block
        if p.direct:
            self.direct_mode.add(p.view)
        self._forward(("proposal", p.view), p.view, p)
        self._progress(now)

        justify_ok = False
        if p.justify is not None:
            j = p.justify
            justify_ok = j.block_digest == block.digest and j.height == block.height and verify_prepare(j, self.roster)
            if justify_ok and (self.lock is None or j.view > self.lock.view):
                self.lock = Lock(j, block)
        if p.view in self.prepare_voted:
            return
        lock = self.lock
        if lock is not None and lock.digest != block.digest:
            return
        if lock is not None and lock.block is None:
            lock.block = block
        self.prepare_voted[p.view] = block.digest
        vote = sign_vote(self.key, self.id, Phase.PREPARE, block.digest, block.height, p.view)
        self._route_vote(vote, now)

    def _forward(self, tag: tuple, view: int, msg) -> None:
        """Relay ``msg`` to our children if we are a subleader in ``view``."""
        tree = self.tree(view)
        if self.id == tree.leader or self.id not in tree.subleaders:
            return
        if tag in self.forwarded:
            return
        self.forwarded.add(tag)
        for child in tree.children_of(self.id):
            self._send(child, msg)

    # -- votes --------------------------------------------------------------

    def _route_vote(self, vote: Vote, now: float) -> None:
        self.my_votes[(vote.phase, vote.view)] = vote
        tree = self.tree(vote.view)
        if tree.leader == self.id:
            self._add_vote(vote, now)
        elif self.id in tree.subleaders:
            self._batch(vote, tree, now)
        elif vote.view in self.direct_mode:
            self._send(tree.leader, vote)
        else:
            self._send(tree.parent_of(self.id), vote)

    def _on_vote(self, vote: Vote, now: float) -> None:
        tree = self.tree(vote.view)
        if tree.leader != self.id and self.id in tree.subleaders and vote.voter in tree.children_of(self.id):
            if verify_vote(vote, self.roster):
                self._batch(vote, tree, now)
            return
        self._add_vote(vote, now)

    def _batch(self, vote: Vote, tree: CommTree, now: float) -> None:
        key = (int(vote.phase), vote.view)
        if key in self.flushed:
            self._send(tree.leader, vote)
            return
        batch = self.batches.get(key)
        if batch is None:
            batch = self.batches[key] = {}
            self._out.append(SetTimer(now + self.batch_wait, Timer("flush", vote.view, phase=int(vote.phase))))
        batch.setdefault(vote.voter, vote)
        if len(batch) == len(tree.children_of(self.id)) + 1:
            self._flush(vote.phase, vote.view)

    def _flush(self, phase: Phase, view: int) -> None:
        key = (int(phase), view)
        if key in self.flushed:
            return
        self.flushed.add(key)
        batch = self.batches.pop(key, {})
        if batch:
            votes = tuple(batch[v] for v in sorted(batch))
            self._send(self.leader_of(view), VoteBatch(self.id, votes))

    def _add_vote(self, vote: Vote, now: float) -> None:
        if vote.height != self.height:
            return
        bucket = self.votes.get(vote.key)
        if bucket is None:
            bucket = self.votes[vote.key] = {}
        if vote.voter in bucket:
            return
        if vote.voter != self.id and not verify_vote(vote, self.roster):
            self._note("drop", extra={"reason": "bad vote signature", "from": vote.voter})
            return
        bucket[vote.voter] = vote
        ckey = (int(vote.phase), vote.view)
        if len(bucket) < self.roster.quorum or ckey in self.certified:
            return
        signers = tuple(sorted(bucket))
        cert = QuorumCertificate(
            vote.phase,
            vote.block_digest,
            vote.height,
            vote.view,
            signers,
            b"".join(bucket[s].signature for s in signers),
        )
        c = Certified(self.id, cert, self.blocks.get(vote.block_digest))
        if vote.phase == Phase.COMMIT:
            self._note("certificate", cert.block_digest, {"cert": cert.to_json()}, view=cert.view)
        if self.leader_of(vote.view) == self.id:
            for child in self.tree(vote.view).subleaders:
                self._send(child, c)
            for node in sorted(self.direct.get(vote.view, ())):
                self._send(node, c)
            if vote.phase == Phase.PREPARE:
                self._arm_straggle(Phase.COMMIT, now)
        self._on_certified(c, now, trusted=True)

    # -- certificates -------------------------------------------------------

    def _on_certified(self, c: Certified, now: float, trusted: bool = False) -> None:
        cert = c.cert
        if cert.height < self.height:
            return
        if cert.phase == Phase.PREPARE:
            if cert.height != self.height:
                return
            if not trusted and not verify_prepare(cert, self.roster):
                self._note("drop", extra={"reason": "bad prepare certificate"})
                return
            block = c.block if c.block is not None else self.blocks.get(cert.block_digest)
            if block is not None:
                if block.digest != cert.block_digest:
                    return
                self.blocks[block.digest] = block
            tree = self.tree(cert.view)
            if c.sender == tree.leader and self.id != tree.leader and self.id not in tree.subleaders:
                self._go_direct(cert.view)
            if (int(Phase.PREPARE), cert.view) in self.certified:
                return
            self.certified[(int(Phase.PREPARE), cert.view)] = c
            if cert.view < self.view:
                # a lock only matters if we might still commit-vote in its view;
                # adopting a stale one would refuse a leader who never heard of it
                return
            if self.lock is None or cert.view > self.lock.view:
                self.lock = Lock(cert, block)
                self._note("lock", cert.block_digest, {"lock_view": cert.view})
                self._report_late_lock(now)
            if cert.view != self.view:
                return
            self._forward(("prepare", cert.view), cert.view, Certified(self.id, cert, block))
            self._progress(now)
            if cert.view in self.commit_voted or cert.view in self.equivocated:
                return
            self.commit_voted.add(cert.view)
            vote = sign_vote(self.key, self.id, Phase.COMMIT, cert.block_digest, cert.height, cert.view)
            self._route_vote(vote, now)
            return

        if not trusted and not verify_certificate(cert, self.roster):
            self._note("drop", extra={"reason": "bad commit certificate"})
            return
        block = c.block if c.block is not None else self.blocks.get(cert.block_digest)
        if block is not None and block.digest != cert.block_digest:
            return
        self.certified.setdefault((int(Phase.COMMIT), cert.view), c)
        self._forward(("commit", cert.view), cert.view, Certified(self.id, cert, block))
        if block is None:
            return
        if cert.height > self.height:
            self.pending_commits.setdefault(cert.height, (block, cert))
            self._request_sync(c.sender)
            return
        self._commit(block, cert, now)

    def _catch_up(self, block: BlockProposal, cert: QuorumCertificate, now: float, source: str | None = None) -> None:
        if cert.height < self.height or cert.block_digest != block.digest:
            return
        if cert.height > self.height:
            if cert.height not in self.pending_commits and verify_certificate(cert, self.roster):
                self.pending_commits[cert.height] = (block, cert)
                if source is not None:
                    self._request_sync(source)
            return
        if verify_certificate(cert, self.roster):
            self._commit(block, cert, now)

    def _request_sync(self, source: str) -> None:
        """Ask a replica that is ahead of us for the blocks we are missing."""
        self.sync_source = source
        if source == self.id or (source, self.height) in self.sync_asked:
            return
        self.sync_asked.add((source, self.height))
        self._send(source, Pull(self.id, self.view, self.height))

    def _commit(self, block: BlockProposal, cert: QuorumCertificate, now: float) -> None:
        if block.height != self.height or block.parent_digest != self.tip or block.digest != cert.block_digest:
            return
        self.log.append((block, cert))
        self.tip = block.digest
        self.committed_txs.update(block.payload)
        self._note("commit", block.digest, {"txs": len(block.payload), "proposer": block.proposer}, view=cert.view)
        self.height += 1
        self.lock = None
        self._prune()
        nxt = self.pending_commits.pop(self.height, None)
        if nxt is not None:
            self._commit(*nxt, now)
            return
        if self.pending_commits and self.sync_source is not None:
            # still a gap below a certified height: fetch the next batch
            self._request_sync(self.sync_source)
        new_view = max(self.view, cert.view + 1)
        self.height_first_view = cert.view + 1
        # a withholding leader may have kept the next leader in the dark
        nxt_leader = self.leader_of(new_view)
        if nxt_leader != self.id and nxt_leader != block.proposer:
            self._send(nxt_leader, Certified(self.id, cert, block))
        if new_view > self.view:
            self._enter_view(new_view, now, defer=True)
        else:
            # committed through a certificate from an earlier view: whatever
            # this view proposed was for the old height, so start it afresh
            self._reset_view(self.view)
            self._progress(now)
            self._maybe_propose(now, defer=True)
            if self.is_leader() and self.view not in self.proposed:
                if len(self.view_changes.get(self.view, ())) >= self.roster.quorum:
                    self._arm_grace(now)

    def _reset_view(self, view: int) -> None:
        self.proposals.pop(view, None)
        self.prepare_voted.pop(view, None)
        self.commit_voted.discard(view)
        self.proposed.discard(view)
        self.grace_armed.discard(view)
        for phase in (int(Phase.PREPARE), int(Phase.COMMIT)):
            self.certified.pop((phase, view), None)
            self.batches.pop((phase, view), None)
            self.flushed.discard((phase, view))
            self.my_votes.pop((phase, view), None)
        self.forwarded = {t for t in self.forwarded if t[1] != view}

    def _prune(self) -> None:
        h = self.height
        self.votes = {k: v for k, v in self.votes.items() if k[1] >= h}
        self.pending_commits = {k: v for k, v in self.pending_commits.items() if k >= h}
        self.sync_asked = {x for x in self.sync_asked if x[1] >= h}
        keep = self.view - 4
        for d in (self.proposals, self.view_changes, self.direct):
            for k in [k for k in d if k < keep]:
                del d[k]
        self.certified = {k: v for k, v in self.certified.items() if k[1] >= keep}
        self.vc_sent = {v for v in self.vc_sent if v >= keep}
        self.blocks = {d: b for d, b in self.blocks.items() if b.height >= h}
        self.prepare_voted = {k: v for k, v in self.prepare_voted.items() if k >= keep}
        self.my_votes = {k: v for k, v in self.my_votes.items() if k[1] >= keep}

    # -- fallback -----------------------------------------------------------

    def _fallback(self, now: float) -> None:
        """No progress for half a phase timeout: bypass our subleader."""
        view = self.view
        leader = self.leader_of(view)
        if leader == self.id:
            return
        self.direct_mode.add(view)
        for phase in (Phase.PREPARE, Phase.COMMIT):
            vote = self.my_votes.get((int(phase), view))
            if vote is not None:
                self._send(leader, vote)
        self._send(leader, Pull(self.id, view, self.height))

    def _go_direct(self, view: int) -> None:
        """The leader reached us past the tree: vote to it directly from now on."""
        if view in self.direct_mode:
            return
        self.direct_mode.add(view)
        leader = self.leader_of(view)
        for phase in (Phase.PREPARE, Phase.COMMIT):
            vote = self.my_votes.get((int(phase), view))
            if vote is not None:
                self._send(leader, vote)

    def _arm_straggle(self, phase: Phase, now: float) -> None:
        if self.tree(self.view).depth > 1:
            at = now + self.batch_wait + 2.0 * self.cfg.delta
            self._out.append(SetTimer(at, Timer("straggle", self.view, phase=int(phase))))

    def _straggle(self, phase: Phase, view: int) -> None:
        """Leader side: reach replicas whose votes did not come up the tree in time."""
        p = self.proposals.get(view)
        if p is None or p.sender != self.id or (int(phase), view) in self.certified:
            return
        if phase == Phase.PREPARE:
            msg = replace(p, direct=True)
        else:
            c = self.certified.get((int(Phase.PREPARE), view))
            if c is None:
                return
            msg = Certified(self.id, c.cert, c.block)
        voted = self.votes.get((phase, p.block.height, view, p.block.digest), {})
        direct = self.direct.setdefault(view, set())
        for node in self.roster.ids:
            if node != self.id and node not in voted and node not in direct:
                direct.add(node)
                self._send(node, msg)

    def _on_pull(self, pull: Pull, now: float) -> None:
        if pull.height < self.height:
            for block, cert in self.log[pull.height : pull.height + SYNC_BATCH]:
                self._send(pull.sender, Certified(self.id, cert, block))
        if self.leader_of(pull.view) != self.id:
            return
        self.direct.setdefault(pull.view, set()).add(pull.sender)
        p = self.proposals.get(pull.view)
        if p is not None and p.sender == self.id:
            self._send(pull.sender, p)
        for phase in (Phase.PREPARE, Phase.COMMIT):
            c = self.certified.get((int(phase), pull.view))
            if c is not None:
                self._send(pull.sender, c)
