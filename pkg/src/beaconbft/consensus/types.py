"""Blocks, votes, certificates and protocol messages with canonical encodings."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

from ..crypto import H, SIGNATURE_SIZE, encode_fields, u64

GENESIS_DIGEST = bytes(32)


class Phase(IntEnum):
    PREPARE = 1
    COMMIT = 2


@dataclass(frozen=True, eq=False)
class BlockProposal:
    height: int
    view: int
    parent_digest: bytes
    payload: tuple[bytes, ...]
    proposer: str

    def encode(self) -> bytes:
        return encode_fields(
            [
                b"block",
                u64(self.height),
                u64(self.view),
                self.parent_digest,
                encode_fields(self.payload),
                self.proposer.encode(),
            ]
        )

    @cached_property
    def digest(self) -> bytes:
        return H(self.encode())

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BlockProposal) and other.digest == self.digest

    def __hash__(self) -> int:
        return hash(self.digest)

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "view": self.view,
            "parent": self.parent_digest.hex(),
            "payload": [p.hex() for p in self.payload],
            "proposer": self.proposer,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BlockProposal":
        return cls(
            obj["height"],
            obj["view"],
            bytes.fromhex(obj["parent"]),
            tuple(bytes.fromhex(p) for p in obj["payload"]),
            obj["proposer"],
        )


def vote_message(phase: Phase, digest: bytes, height: int, view: int) -> bytes:
    return encode_fields([b"vote", bytes([int(phase)]), digest, u64(height), u64(view)])


@dataclass(frozen=True)
class Vote:
    voter: str
    phase: Phase
    block_digest: bytes
    height: int
    view: int
    signature: bytes = field(repr=False)

    @property
    def message(self) -> bytes:
        return vote_message(self.phase, self.block_digest, self.height, self.view)

    @property
    def key(self) -> tuple:
        return (self.phase, self.height, self.view, self.block_digest)


@dataclass(frozen=True)
class QuorumCertificate:
    """Multi-signature over one vote message.

    ``aggregate_signature`` is the concatenation of the signers' signatures in
    ``signers`` order (signers sorted by node id).
    """

    phase: Phase
    block_digest: bytes
    height: int
    view: int
    signers: tuple[str, ...]
    aggregate_signature: bytes = field(repr=False)

    @property
    def message(self) -> bytes:
        return vote_message(self.phase, self.block_digest, self.height, self.view)

    def signature_of(self, i: int) -> bytes:
        return self.aggregate_signature[i * SIGNATURE_SIZE : (i + 1) * SIGNATURE_SIZE]

    def to_json(self) -> dict:
        return {
            "phase": self.phase.name.lower(),
            "digest": self.block_digest.hex(),
            "height": self.height,
            "view": self.view,
            "signers": list(self.signers),
            "aggregate_signature": self.aggregate_signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QuorumCertificate":
        return cls(
            Phase[obj["phase"].upper()],
            bytes.fromhex(obj["digest"]),
            obj["height"],
            obj["view"],
            tuple(obj["signers"]),
            bytes.fromhex(obj["aggregate_signature"]),
        )


# A commit certificate is a quorum certificate in the COMMIT phase.
CommitCertificate = QuorumCertificate


def proposal_message(digest: bytes, view: int) -> bytes:
    return encode_fields([b"propose", digest, u64(view)])


@dataclass(frozen=True)
class Proposal:
    sender: str
    view: int
    block: BlockProposal
    signature: bytes = field(repr=False)
    # prepare certificate for ``block`` from an earlier view, when re-proposing a lock
    justify: QuorumCertificate | None = None
    # committed parent and its certificate, lets lagging replicas catch up
    parent: tuple[BlockProposal, QuorumCertificate] | None = None
    # view-change messages proving this view was legitimately entered
    view_proof: tuple["ViewChange", ...] = ()
    # unsigned routing hint: the leader sent this bypassing the tree
    direct: bool = False


def view_change_message(view: int, height: int, lock_digest: bytes, lock_view: int) -> bytes:
    return encode_fields([b"view-change", u64(view), u64(height), lock_digest, u64(lock_view)])


@dataclass(frozen=True)
class ViewChange:
    sender: str
    view: int  # the view being entered
    height: int
    signature: bytes = field(repr=False)
    lock: QuorumCertificate | None = None
    lock_block: BlockProposal | None = None
    high_commit: tuple[BlockProposal, QuorumCertificate] | None = None

    @property
    def message(self) -> bytes:
        if self.lock is None:
            return view_change_message(self.view, self.height, GENESIS_DIGEST, 0)
        return view_change_message(self.view, self.height, self.lock.block_digest, self.lock.view + 1)


@dataclass(frozen=True)
class VoteBatch:
    sender: str
    votes: tuple[Vote, ...]


@dataclass(frozen=True)
class Certified:
    """A quorum certificate pushed down the tree, with the block when known."""

    sender: str
    cert: QuorumCertificate
    block: BlockProposal | None


@dataclass(frozen=True)
class Pull:
    sender: str
    view: int
    height: int


Message = Proposal | Vote | VoteBatch | Certified | ViewChange | Pull
