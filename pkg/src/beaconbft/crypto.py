"""Hashing, canonical encodings and Ed25519 signing keys shared across modules."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 32


def H(*parts: bytes) -> bytes:
    """SHA-256 over the concatenation of ``parts``."""
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def u64(x: int) -> bytes:
    return int(x).to_bytes(8, "big")


def encode_fields(fields: Iterable[bytes]) -> bytes:
    """Length-prefixed concatenation (4-byte big-endian length per field)."""
    out = bytearray()
    for f in fields:
        out += len(f).to_bytes(4, "big")
        out += f
    return bytes(out)


@dataclass(frozen=True)
class SigningKey:
    """Ed25519 keypair. ``seed`` is the 32-byte private scalar seed."""

    seed: bytes = field(repr=False)

    @classmethod
    def derive(cls, *labels: bytes) -> "SigningKey":
        return cls(H(b"beaconbft/key", *labels))

    @property
    def _private(self) -> Ed25519PrivateKey:
        return _private_key(self.seed)

    @property
    def public_key(self) -> bytes:
        return _public_bytes(self.seed)

    def sign(self, message: bytes) -> bytes:
        return self._private.sign(message)


@lru_cache(maxsize=4096)
def _private_key(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(seed)


@lru_cache(maxsize=4096)
def _public_bytes(seed: bytes) -> bytes:
    return _private_key(seed).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)


@lru_cache(maxsize=4096)
def _load_public(public_key: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public_key)


# Verification is deterministic, so memoising it is semantically invisible and
# keeps certificate re-verification across simulated replicas cheap.
@lru_cache(maxsize=1 << 20)
def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    if len(signature) != SIGNATURE_SIZE or len(public_key) != PUBLIC_KEY_SIZE:
        return False
    try:
        _load_public(public_key).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True
