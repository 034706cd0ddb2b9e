"""Identity-gated admission: issuer-signed credentials and a nullifier registry.

An issuer stands in for the identity infrastructure.  It binds an opaque
identity commitment to a consensus key, and the nullifier derived from the
identity is what the roster uses to keep one live node per identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .crypto import H, SigningKey, verify_signature

NULLIFIER_TAG = b"beaconbft/nullifier/v1"
CREDENTIAL_TAG = b"beaconbft/credential/v1"


class AdmissionError(Exception):
    reason = "rejected"


class UntrustedIssuer(AdmissionError):
    reason = "untrusted"


class SybilRejected(AdmissionError):
    reason = "sybil"


class ForgedCredential(AdmissionError):
    reason = "forgery"


class DuplicateNode(AdmissionError):
    reason = "duplicate-node"


def node_id_for(public_key: bytes) -> str:
    # Prefix of the key itself, so ordering by id agrees with ordering by key.
    return public_key[:8].hex()


def nullifier_for(issuer_id: str, identity_commitment: bytes) -> bytes:
    return H(NULLIFIER_TAG, issuer_id.encode(), b"\x00", identity_commitment)


def _credential_message(issuer_id: str, nullifier: bytes, node_public_key: bytes) -> bytes:
    return CREDENTIAL_TAG + issuer_id.encode() + b"\x00" + nullifier + node_public_key


@dataclass(frozen=True)
class Issuer:
    issuer_id: str
    signing_key: SigningKey = field(repr=False)

    @classmethod
    def create(cls, issuer_id: str, seed: bytes | None = None) -> "Issuer":
        import secrets

        return cls(issuer_id, SigningKey(seed if seed is not None else secrets.token_bytes(32)))

    @property
    def verification_key(self) -> bytes:
        return self.signing_key.public_key

    def to_json(self, include_secret: bool = False) -> dict:
        obj = {"issuer_id": self.issuer_id, "verification_key": self.verification_key.hex()}
        if include_secret:
            obj["signing_seed"] = self.signing_key.seed.hex()
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "Issuer":
        return cls(obj["issuer_id"], SigningKey(bytes.fromhex(obj["signing_seed"])))


@dataclass(frozen=True)
class Credential:
    issuer_id: str
    nullifier: bytes
    node_public_key: bytes
    signature: bytes

    @property
    def node_id(self) -> str:
        return node_id_for(self.node_public_key)

    def to_json(self) -> dict:
        return {
            "issuer_id": self.issuer_id,
            "nullifier": self.nullifier.hex(),
            "node_public_key": self.node_public_key.hex(),
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Credential":
        return cls(
            issuer_id=obj["issuer_id"],
            nullifier=bytes.fromhex(obj["nullifier"]),
            node_public_key=bytes.fromhex(obj["node_public_key"]),
            signature=bytes.fromhex(obj["signature"]),
        )


def issue_credential(issuer: Issuer, identity_commitment: bytes, node_public_key: bytes) -> Credential:
    nullifier = nullifier_for(issuer.issuer_id, identity_commitment)
    sig = issuer.signing_key.sign(_credential_message(issuer.issuer_id, nullifier, node_public_key))
    return Credential(issuer.issuer_id, nullifier, node_public_key, sig)


def verify_credential(cred: Credential, verification_key: bytes) -> bool:
    msg = _credential_message(cred.issuer_id, cred.nullifier, cred.node_public_key)
    return verify_signature(verification_key, msg, cred.signature)


@dataclass(frozen=True)
class Member:
    node_id: str
    public_key: bytes
    nullifier: bytes


@dataclass(frozen=True)
class Roster:
    epoch: int = 0
    members: tuple[Member, ...] = ()
    nullifier_set: frozenset[bytes] = frozenset()

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.members, key=lambda m: m.node_id))
        if ordered != self.members:
            object.__setattr__(self, "members", ordered)

    def __len__(self) -> int:
        return len(self.members)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(m.node_id for m in self.members)

    def key_of(self, node_id: str) -> bytes | None:
        return self._keys.get(node_id)

    @property
    def _keys(self) -> dict[str, bytes]:
        cache = self.__dict__.get("_key_cache")
        if cache is None:
            cache = {m.node_id: m.public_key for m in self.members}
            object.__setattr__(self, "_key_cache", cache)
        return cache

    def index_of(self, node_id: str) -> int:
        return self.ids.index(node_id)

    @property
    def fault_bound(self) -> int:
        return (len(self.members) - 1) // 3

    @property
    def quorum(self) -> int:
        # n - f; equals 2f+1 when n = 3f+1.
        return len(self.members) - self.fault_bound

    def active_nullifiers(self) -> set[bytes]:
        return {m.nullifier for m in self.members}

    def to_json(self) -> dict:
        return {
            "epoch": self.epoch,
            "members": [
                {"id": m.node_id, "pubkey_hex": m.public_key.hex(), "nullifier": m.nullifier.hex()}
                for m in self.members
            ],
            "nullifiers": sorted(n.hex() for n in self.nullifier_set),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Roster":
        members = tuple(
            Member(
                m["id"],
                bytes.fromhex(m["pubkey_hex"]),
                bytes.fromhex(m.get("nullifier", "")),
            )
            for m in obj.get("members", [])
        )
        return cls(
            epoch=int(obj.get("epoch", 0)),
            members=members,
            nullifier_set=frozenset(bytes.fromhex(h) for h in obj.get("nullifiers", [])),
        )

    @classmethod
    def from_keys(cls, public_keys: Iterable[bytes], epoch: int = 0) -> "Roster":
        """Roster without admission history (nullifiers derived from keys)."""
        members = tuple(Member(node_id_for(pk), pk, H(NULLIFIER_TAG, pk)) for pk in public_keys)
        return cls(epoch, members, frozenset(m.nullifier for m in members))


def admit(
    roster: Roster,
    cred: Credential,
    trusted_issuers: Mapping[str, bytes],
    allow_rejoin: bool = True,
) -> Roster:
    """Return a new roster with ``cred``'s node added, or raise AdmissionError.

    ``trusted_issuers`` maps issuer id to verification key.  A nullifier bound
    to a live member is a Sybil attempt; a nullifier whose member has left may
    come back under a new key when ``allow_rejoin`` is set.
    """
    key = trusted_issuers.get(cred.issuer_id)
    if key is None:
        raise UntrustedIssuer(f"issuer {cred.issuer_id!r} is not trusted")
    if not verify_credential(cred, key):
        raise ForgedCredential("issuer signature does not verify")
    if cred.nullifier in roster.active_nullifiers():
        raise SybilRejected(f"nullifier {cred.nullifier.hex()[:16]} already bound to a live node")
    if cred.nullifier in roster.nullifier_set and not allow_rejoin:
        raise SybilRejected(f"nullifier {cred.nullifier.hex()[:16]} was admitted before")
    if roster.key_of(cred.node_id) is not None:
        raise DuplicateNode(f"node id {cred.node_id} already present")
    member = Member(cred.node_id, cred.node_public_key, cred.nullifier)
    return replace(
        roster,
        members=roster.members + (member,),
        nullifier_set=roster.nullifier_set | {cred.nullifier},
    )


@dataclass(frozen=True)
class EpochReport:
    rejected: tuple[tuple[str, str], ...] = ()  # (node id, reason)
    unknown_leaves: tuple[str, ...] = ()


def advance_epoch(
    roster: Roster,
    joins: Iterable[Credential],
    leaves: Iterable[str],
    trusted_issuers: Mapping[str, bytes],
    allow_rejoin: bool = True,
) -> tuple[Roster, EpochReport]:
    """Apply leaves, then joins, and bump the epoch.

    Joins are processed in order of node public key, so any permutation of the
    batch gives the same roster and a duplicated nullifier goes to the
    smallest key.
    """
    leave_set = set(leaves)
    present = set(roster.ids)
    unknown = tuple(sorted(leave_set - present))
    members = tuple(m for m in roster.members if m.node_id not in leave_set)
    current = replace(roster, members=members)

    rejected = []
    for cred in sorted(joins, key=lambda c: (c.node_public_key, c.issuer_id, c.nullifier)):
        try:
            current = admit(current, cred, trusted_issuers, allow_rejoin)
        except AdmissionError as exc:
            rejected.append((cred.node_id, exc.reason))
    return replace(current, epoch=roster.epoch + 1), EpochReport(tuple(rejected), unknown)


def load_roster(path) -> Roster:
    with open(path) as fh:
        return Roster.from_json(json.load(fh))
