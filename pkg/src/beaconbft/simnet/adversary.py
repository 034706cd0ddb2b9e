"""Round-adaptive corruption and message-level Byzantine behaviour.

Corruptions chosen when round ``r`` ends take effect when round ``r+1``
ends.  The budget covers live and pending corruptions together, so to pick a
new target once the budget is spent the adversary releases a node first.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from ..consensus.types import BlockProposal, Certified, Phase, Proposal, Vote, proposal_message
from ..consensus.certificates import sign_vote
from ..crypto import SigningKey
from .scenario import Policy

SWAP_PROBABILITY = 0.5


@dataclass(frozen=True)
class AdversaryState:
    f: int
    corrupt_set: frozenset[int] = frozenset()
    # (node, round at whose end it activates)
    pending: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        live = set(self.corrupt_set) | {n for n, _ in self.pending}
        assert len(live) <= self.f, f"corruption budget exceeded: {sorted(live)} with f={self.f}"

    @property
    def pending_nodes(self) -> frozenset[int]:
        return frozenset(n for n, _ in self.pending)


@dataclass(frozen=True)
class StepResult:
    state: AdversaryState
    activated: tuple[int, ...] = ()
    released: tuple[int, ...] = ()
    chosen: tuple[int, ...] = ()


def adversary_step(
    adv: AdversaryState,
    round_end: int,
    rng: random.Random,
    n: int,
    adaptive: bool = True,
    target: int | None = None,
) -> StepResult:
    """Advance the adversary at the end of round ``round_end``.

    Pending corruptions due at this round activate.  If ``adaptive``, the
    adversary then (with probability 1/2) picks a new victim: ``target`` if
    given and honest, otherwise a uniformly random honest node.
    """
    due = tuple(sorted(node for node, r in adv.pending if r <= round_end))
    pending = tuple(p for p in adv.pending if p[1] > round_end)
    corrupt = set(adv.corrupt_set) | set(due)
    released: list[int] = []
    chosen: list[int] = []

    if adaptive and adv.f > 0 and rng.random() < SWAP_PROBABILITY:
        busy = corrupt | {p for p, _ in pending}
        candidates = [i for i in range(n) if i not in busy]
        victim = target if target is not None and target not in busy else None
        if victim is None and candidates:
            victim = rng.choice(candidates)
        if victim is not None:
            if len(busy) >= adv.f:
                # release one live corruption to stay within budget
                if corrupt:
                    out = rng.choice(sorted(corrupt))
                    corrupt.discard(out)
                    released.append(out)
                else:
                    victim = None
            if victim is not None:
                pending = pending + ((victim, round_end + 1),)
                chosen.append(victim)

    state = AdversaryState(adv.f, frozenset(corrupt), pending)
    return StepResult(state, due, tuple(released), tuple(chosen))


def initial_state(f: int, n: int, rng: random.Random, initial: Sequence[int] | None) -> AdversaryState:
    if initial is None:
        initial = rng.sample(range(n), min(f, n))
    return AdversaryState(f, frozenset(initial))


class Behaviour:
    """Rewrites the outbound traffic of corrupt replicas according to a policy."""

    def __init__(self, policy: Policy, keys: dict[str, SigningKey]):
        self.policy = policy
        self.keys = keys
        # blocks the adversary has minted per (height, view)
        self.twins: dict[tuple[int, int], list[BlockProposal]] = {}

    def outbound(self, sender: str, sends: list[tuple[str, object]]) -> tuple[list[tuple[str, object]], list[BlockProposal]]:
        """Return (sends to deliver, twin blocks minted)."""
        if self.policy == Policy.CRASH:
            return [], []
        if self.policy != Policy.EQUIVOCATE:
            return sends, []
        out: list[tuple[str, object]] = []
        minted: list[BlockProposal] = []
        # group by message identity so a broadcast can be split
        groups: dict[int, list[str]] = {}
        msgs: dict[int, object] = {}
        for dest, msg in sends:
            groups.setdefault(id(msg), []).append(dest)
            msgs[id(msg)] = msg
        for mid, dests in groups.items():
            msg = msgs[mid]
            if isinstance(msg, Proposal) and msg.sender == sender:
                twin = self._twin(msg)
                minted.append(twin.block)
                for i, d in enumerate(dests):
                    out.append((d, msg if i % 2 == 0 else twin))
            elif isinstance(msg, Certified) and msg.sender == sender and len(dests) > 1:
                out.extend((d, msg) for i, d in enumerate(dests) if i % 2 == 0)
            elif isinstance(msg, Vote) and msg.voter == sender:
                out.extend((d, msg) for d in dests)
                out.extend((d, v) for v in self._extra_votes(msg) for d in dests)
            else:
                out.extend((d, msg) for d in dests)
        return out, minted

    def _twin(self, p: Proposal) -> Proposal:
        b = p.block
        marker = b"equivocation/" + str(p.view).encode()
        twin_block = BlockProposal(b.height, b.view, b.parent_digest, b.payload + (marker,), b.proposer)
        known = self.twins.setdefault((b.height, p.view), [])
        known.extend(x for x in (b, twin_block) if x not in known)
        sig = self.keys[p.sender].sign(proposal_message(twin_block.digest, p.view))
        return Proposal(p.sender, p.view, twin_block, sig, None, p.parent, p.view_proof)

    def _extra_votes(self, vote: Vote) -> list[Vote]:
        """Double-vote: sign both phases for every block minted at this (height, view)."""
        extra = []
        key = self.keys[vote.voter]
        for blk in self.twins.get((vote.height, vote.view), ()):
            for phase in (Phase.PREPARE, Phase.COMMIT):
                if blk.digest == vote.block_digest and phase == vote.phase:
                    continue
                extra.append(sign_vote(key, vote.voter, phase, blk.digest, vote.height, vote.view))
        return extra
