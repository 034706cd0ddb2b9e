"""Threshold-BLS randomness beacon over BLS12-381.

Public keys live in G1 and signatures in G2.  Key material comes from a
locally simulated Joint-Feldman DKG: every dealer shares a random
degree ``t-1`` polynomial with Feldman commitments, receivers check their
shares against those commitments, and dealers whose shares fail are
dropped from the qualified set.
"""

from __future__ import annotations

import json
import random
import secrets
from dataclasses import dataclass, field
from functools import lru_cache
from hashlib import sha256
from typing import Iterable, Sequence

from py_arkworks_bls12381 import G1Point, G2Point, GT, Scalar
from py_ecc.bls.g2_primitives import G2_to_signature
from py_ecc.bls.hash_to_curve import hash_to_G2

from .crypto import H, u64

CURVE_ORDER = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001
HASH_DST = b"BLS_SIG_BLS12381G2_XMD:SHA-256_SSWU_RO_NUL_"
ROUND_TAG = b"beaconbft/round/v1"
MOCK_TAG = b"beaconbft/mock-beacon/v1"

_G1 = G1Point()


class BeaconError(Exception):
    pass


class ParameterError(BeaconError, ValueError):
    pass


class InsufficientShares(BeaconError):
    pass


def round_message(round: int) -> bytes:
    """Canonical message signed for a beacon round."""
    if round < 0:
        raise ParameterError("round must be non-negative")
    return ROUND_TAG + u64(round)


def _scalar(x: int) -> Scalar:
    return Scalar(x % CURVE_ORDER)


@lru_cache(maxsize=256)
def _hash_round(round: int) -> bytes:
    point = hash_to_G2(round_message(round), HASH_DST, sha256)
    return bytes(G2_to_signature(point))


def hash_round_to_g2(round: int) -> G2Point:
    return G2Point.from_compressed_bytes(_hash_round(round))


def _g1_bytes(p: G1Point) -> bytes:
    return bytes(p.to_compressed_bytes())


def _g2_bytes(p: G2Point) -> bytes:
    return bytes(p.to_compressed_bytes())


def _eval_poly(coeffs: Sequence[int], x: int) -> int:
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % CURVE_ORDER
    return acc


def lagrange_at_zero(indices: Sequence[int]) -> list[int]:
    """Lagrange basis coefficients evaluated at x = 0 for distinct ``indices``."""
    if len(set(indices)) != len(indices):
        raise ParameterError("indices must be distinct")
    coeffs = []
    for i in indices:
        num, den = 1, 1
        for j in indices:
            if j != i:
                num = num * j % CURVE_ORDER
                den = den * (j - i) % CURVE_ORDER
        coeffs.append(num * pow(den, -1, CURVE_ORDER) % CURVE_ORDER)
    return coeffs


def interpolate_at_zero(points: Iterable[tuple[int, int]]) -> int:
    pts = list(points)
    lam = lagrange_at_zero([i for i, _ in pts])
    return sum(l * y for l, (_, y) in zip(lam, pts)) % CURVE_ORDER


@dataclass(frozen=True)
class PolynomialCommitment:
    """Feldman commitments ``g^a_j`` to the coefficients of a degree t-1 polynomial."""

    coeff_commitments: tuple[G1Point, ...]

    @property
    def t(self) -> int:
        return len(self.coeff_commitments)

    def evaluate(self, index: int) -> G1Point:
        """``g^F(index)`` computed from the public commitments only."""
        powers = [_scalar(pow(index, j, CURVE_ORDER)) for j in range(self.t)]
        return G1Point.multiexp_unchecked(list(self.coeff_commitments), powers)

    def combine(self, other: "PolynomialCommitment") -> "PolynomialCommitment":
        if other.t != self.t:
            raise ParameterError("commitment degrees differ")
        return PolynomialCommitment(
            tuple(a + b for a, b in zip(self.coeff_commitments, other.coeff_commitments))
        )

    def to_hex(self) -> list[str]:
        return [_g1_bytes(c).hex() for c in self.coeff_commitments]


@dataclass(frozen=True)
class SecretShare:
    index: int
    value: int = field(repr=False)


@dataclass(frozen=True)
class PartialSignature:
    index: int
    round: int
    signature: bytes  # compressed G2


@dataclass(frozen=True)
class BeaconGroup:
    n: int
    t: int
    group_public_key: G1Point
    member_public_keys: tuple[G1Point, ...]  # position i-1 holds the key for index i
    commitments: PolynomialCommitment
    qualified: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 1 <= self.t <= self.n:
            raise ParameterError(f"need 1 <= t <= n, got t={self.t}, n={self.n}")

    def member_key(self, index: int) -> G1Point:
        if not 1 <= index <= self.n:
            raise ParameterError(f"index {index} outside 1..{self.n}")
        return self.member_public_keys[index - 1]

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "t": self.t,
            "group_public_key": _g1_bytes(self.group_public_key).hex(),
            "member_public_keys": [_g1_bytes(k).hex() for k in self.member_public_keys],
            "commitments": self.commitments.to_hex(),
            "qualified": list(self.qualified),
        }


@dataclass(frozen=True)
class MockBeaconGroup:
    """Stand-in "group" for the hash-chain beacon; verification re-derives the chain."""

    seed: int


@dataclass(frozen=True)
class BeaconOutput:
    round: int
    signature: bytes
    randomness: bytes
    mock: bool = False

    def to_json(self) -> dict:
        return {
            "round": self.round,
            "signature_hex": self.signature.hex(),
            "randomness_hex": self.randomness.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict, mock: bool = False) -> "BeaconOutput":
        return cls(
            round=int(obj["round"]),
            signature=bytes.fromhex(obj["signature_hex"]),
            randomness=bytes.fromhex(obj["randomness_hex"]),
            mock=mock,
        )


@dataclass
class Dealer:
    """One Joint-Feldman dealer. Holds its secret polynomial."""

    index: int
    coefficients: list[int] = field(repr=False)

    @property
    def commitment(self) -> PolynomialCommitment:
        return PolynomialCommitment(tuple(_G1 * _scalar(a) for a in self.coefficients))

    def share_for(self, index: int) -> int:
        return _eval_poly(self.coefficients, index)


@dataclass
class DkgTranscript:
    """Everything a local DKG run produced, including dealer secrets (tests only)."""

    n: int
    t: int
    dealers: list[Dealer]
    commitments: dict[int, PolynomialCommitment]
    # dealt[dealer][receiver] is the share value the dealer actually sent
    dealt: dict[int, dict[int, int]]
    complaints: dict[int, list[int]]
    qualified: tuple[int, ...]

    @property
    def group_secret(self) -> int:
        return sum(self.dealers[i - 1].coefficients[0] for i in self.qualified) % CURVE_ORDER

    def summed_commitment(self) -> PolynomialCommitment:
        combined = None
        for i in self.qualified:
            c = self.commitments[i]
            combined = c if combined is None else combined.combine(c)
        assert combined is not None
        return combined

    def shares(self) -> list[SecretShare]:
        return [
            SecretShare(j, sum(self.dealt[i][j] for i in self.qualified) % CURVE_ORDER)
            for j in range(1, self.n + 1)
        ]

    def group(self) -> BeaconGroup:
        commitment = self.summed_commitment()
        members = tuple(commitment.evaluate(j) for j in range(1, self.n + 1))
        return BeaconGroup(
            n=self.n,
            t=self.t,
            group_public_key=commitment.coeff_commitments[0],
            member_public_keys=members,
            commitments=commitment,
            qualified=self.qualified,
        )


def default_threshold(n: int) -> int:
    return n // 2 + 1


def run_joint_feldman(
    n: int,
    t: int,
    rng_seed: int | None = None,
    faulty_dealers: Iterable[int] = (),
) -> DkgTranscript:
    """Simulate every dealer in-process.

    A dealer listed in ``faulty_dealers`` hands its highest-index receiver a
    share off by one; that receiver's Feldman check fails, it complains, and
    the dealer is excluded from the qualified set.
    """
    if not (isinstance(n, int) and isinstance(t, int)) or not 1 <= t <= n:
        raise ParameterError(f"need 1 <= t <= n, got t={t}, n={n}")
    rng = random.Random(rng_seed) if rng_seed is not None else secrets.SystemRandom()
    faulty = set(faulty_dealers)

    dealers = [
        Dealer(i, [rng.randrange(1, CURVE_ORDER) for _ in range(t)]) for i in range(1, n + 1)
    ]
    commitments = {d.index: d.commitment for d in dealers}
    dealt: dict[int, dict[int, int]] = {}
    for d in dealers:
        row = {j: d.share_for(j) for j in range(1, n + 1)}
        if d.index in faulty:
            row[n] = (row[n] + 1) % CURVE_ORDER
        dealt[d.index] = row

    complaints: dict[int, list[int]] = {}
    for d in dealers:
        bad = [
            j
            for j in range(1, n + 1)
            if not vss_verify_share(SecretShare(j, dealt[d.index][j]), commitments[d.index])
        ]
        if bad:
            complaints[d.index] = bad
    qualified = tuple(i for i in range(1, n + 1) if i not in complaints)
    if not qualified:
        raise BeaconError("every dealer was disqualified")
    return DkgTranscript(n, t, dealers, commitments, dealt, complaints, qualified)


def dkg_run(
    n: int, t: int, rng_seed: int | None = None, faulty_dealers: Iterable[int] = ()
) -> tuple[BeaconGroup, list[SecretShare]]:
    tr = run_joint_feldman(n, t, rng_seed, faulty_dealers)
    return tr.group(), tr.shares()


def vss_verify_share(share: SecretShare, commitments: PolynomialCommitment) -> bool:
    if share.index < 1:
        return False
    return _G1 * _scalar(share.value) == commitments.evaluate(share.index)


def partial_sign(share: SecretShare, round: int) -> PartialSignature:
    sig = hash_round_to_g2(round) * _scalar(share.value)
    return PartialSignature(share.index, round, _g2_bytes(sig))


def _pairing_check(pk: G1Point, sig: G2Point, hm: G2Point) -> bool:
    return GT.pairing(_G1, sig) == GT.pairing(pk, hm)


def _decode_g2(data: bytes) -> G2Point | None:
    try:
        return G2Point.from_compressed_bytes(data)
    except Exception:
        return None


def verify_partial(partial: PartialSignature, group: BeaconGroup) -> bool:
    if not 1 <= partial.index <= group.n:
        return False
    sig = _decode_g2(partial.signature)
    if sig is None:
        return False
    return _pairing_check(group.member_key(partial.index), sig, hash_round_to_g2(partial.round))


def aggregate(partials: Iterable[PartialSignature], group: BeaconGroup) -> BeaconOutput:
    """Interpolate the group signature from at least ``t`` valid partials.

    Invalid partials are discarded before interpolation.  The result does not
    depend on which valid ``t``-subset ends up being used.
    """
    partials = list(partials)
    rounds = {p.round for p in partials}
    if len(rounds) > 1:
        raise BeaconError(f"partials span several rounds: {sorted(rounds)}")
    valid: dict[int, G2Point] = {}
    for p in partials:
        if p.index in valid:
            continue
        if verify_partial(p, group):
            valid[p.index] = G2Point.from_compressed_bytes(p.signature)
    if len(valid) < group.t:
        raise InsufficientShares(f"{len(valid)} valid partials, need {group.t}")
    chosen = sorted(valid)[: group.t]
    lam = lagrange_at_zero(chosen)
    sig = G2Point.multiexp_unchecked([valid[i] for i in chosen], [_scalar(l) for l in lam])
    sig_bytes = _g2_bytes(sig)
    return BeaconOutput(round=rounds.pop(), signature=sig_bytes, randomness=H(sig_bytes))


def mock_beacon(seed: int, round: int) -> BeaconOutput:
    return BeaconOutput(
        round=round,
        signature=b"",
        randomness=H(MOCK_TAG, u64(seed), u64(round)),
        mock=True,
    )


def verify_output(out: BeaconOutput, group: BeaconGroup | MockBeaconGroup) -> bool:
    if isinstance(group, MockBeaconGroup):
        return out.mock and out.randomness == mock_beacon(group.seed, out.round).randomness
    if out.mock or out.round < 0:
        return False
    if out.randomness != H(out.signature):
        return False
    sig = _decode_g2(out.signature)
    if sig is None:
        return False
    return _pairing_check(group.group_public_key, sig, hash_round_to_g2(out.round))


class ThresholdBeacon:
    """Beacon service backed by a DKG group; each round is signed by the
    lowest-indexed ``t`` members and cached."""

    def __init__(self, group: BeaconGroup, shares: Sequence[SecretShare]):
        self.group = group
        self._shares = sorted(shares, key=lambda s: s.index)
        self._cache: dict[int, BeaconOutput] = {}

    @classmethod
    def from_seed(cls, n: int, t: int | None, seed: int) -> "ThresholdBeacon":
        group, shares = dkg_run(n, t or default_threshold(n), seed)
        return cls(group, shares)

    def output(self, round: int) -> BeaconOutput:
        out = self._cache.get(round)
        if out is None:
            partials = [partial_sign(s, round) for s in self._shares[: self.group.t]]
            out = self._cache[round] = aggregate(partials, self.group)
        return out

    def verify(self, out: BeaconOutput) -> bool:
        return verify_output(out, self.group)


class MockBeacon:
    def __init__(self, seed: int):
        self.group = MockBeaconGroup(seed)
        self._cache: dict[int, BeaconOutput] = {}

    def output(self, round: int) -> BeaconOutput:
        out = self._cache.get(round)
        if out is None:
            out = self._cache[round] = mock_beacon(self.group.seed, round)
        return out

    def verify(self, out: BeaconOutput) -> bool:
        return verify_output(out, self.group)


def demo_transcript(n: int, t: int | None, rounds: int, seed: int) -> list[dict]:
    beacon = ThresholdBeacon.from_seed(n, t, seed)
    rows = []
    for r in range(rounds):
        out = beacon.output(r)
        row = out.to_json()
        row["verified"] = beacon.verify(out)
        rows.append(row)
    return rows


def transcript_json(rows: list[dict]) -> str:
    return "\n".join(json.dumps(r, sort_keys=True) for r in rows)
