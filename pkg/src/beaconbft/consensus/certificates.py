"""Vote signing, quorum certificate formation/verification and cold sync."""

from __future__ import annotations

from typing import Iterable, Sequence

from ..crypto import SIGNATURE_SIZE, SigningKey, verify_signature
from ..membership import Roster
from .types import (
    GENESIS_DIGEST,
    BlockProposal,
    Phase,
    QuorumCertificate,
    Vote,
    vote_message,
)


class CertificateError(Exception):
    pass


class InsufficientVotes(CertificateError):
    pass


class MixedVotes(CertificateError):
    pass


def sign_vote(key: SigningKey, voter: str, phase: Phase, digest: bytes, height: int, view: int) -> Vote:
    sig = key.sign(vote_message(phase, digest, height, view))
    return Vote(voter, phase, digest, height, view, sig)


def verify_vote(vote: Vote, roster: Roster) -> bool:
    key = roster.key_of(vote.voter)
    return key is not None and verify_signature(key, vote.message, vote.signature)


def form_quorum(votes: Iterable[Vote], roster: Roster, phase: Phase | None = None) -> QuorumCertificate:
    """Certificate over identical vote messages from at least ``roster.quorum`` signers.

    Votes with bad signatures or from non-members are dropped before counting,
    and repeated voters count once.
    """
    votes = list(votes)
    if not votes:
        raise InsufficientVotes("no votes")
    keys = {v.key for v in votes}
    if len(keys) != 1:
        raise MixedVotes("votes reference different (phase, height, view, digest)")
    ph, height, view, digest = keys.pop()
    if phase is not None and ph != phase:
        raise MixedVotes(f"expected {phase.name} votes")
    by_voter: dict[str, bytes] = {}
    for v in votes:
        if v.voter not in by_voter and verify_vote(v, roster):
            by_voter[v.voter] = v.signature
    if len(by_voter) < roster.quorum:
        raise InsufficientVotes(f"{len(by_voter)} distinct valid signers, need {roster.quorum}")
    signers = tuple(sorted(by_voter))
    agg = b"".join(by_voter[s] for s in signers)
    return QuorumCertificate(ph, digest, height, view, signers, agg)


def form_certificate(votes: Iterable[Vote], roster: Roster) -> QuorumCertificate:
    return form_quorum(votes, roster, Phase.COMMIT)


def verify_certificate(cert: QuorumCertificate, roster: Roster, phase: Phase = Phase.COMMIT) -> bool:
    if cert.phase != phase:
        return False
    signers = cert.signers
    if len(set(signers)) != len(signers) or list(signers) != sorted(signers):
        return False
    if len(signers) < roster.quorum:
        return False
    if len(cert.aggregate_signature) != SIGNATURE_SIZE * len(signers):
        return False
    msg = cert.message
    for i, s in enumerate(signers):
        key = roster.key_of(s)
        if key is None or not verify_signature(key, msg, cert.signature_of(i)):
            return False
    return True


def verify_prepare(cert: QuorumCertificate, roster: Roster) -> bool:
    return verify_certificate(cert, roster, Phase.PREPARE)


def sync_from_certificates(
    pairs: Sequence[tuple[BlockProposal, QuorumCertificate]], roster: Roster
) -> list[tuple[BlockProposal, QuorumCertificate]]:
    """Rebuild a commit log from (block, certificate) pairs alone.

    Raises CertificateError on the first pair that does not verify or does
    not extend the previous block.
    """
    log: list[tuple[BlockProposal, QuorumCertificate]] = []
    tip = GENESIS_DIGEST
    for block, cert in pairs:
        height = len(log)
        if block.height != height or cert.height != height:
            raise CertificateError(f"expected height {height}, got block {block.height}/cert {cert.height}")
        if block.parent_digest != tip:
            raise CertificateError(f"block at height {height} does not extend the log")
        if cert.block_digest != block.digest:
            raise CertificateError(f"certificate at height {height} is for another block")
        if not verify_certificate(cert, roster):
            raise CertificateError(f"certificate at height {height} does not verify")
        log.append((block, cert))
        tip = block.digest
    return log
