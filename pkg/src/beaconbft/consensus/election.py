"""Beacon-driven leader election and the rotating-subleader communication tree."""

from __future__ import annotations

from dataclasses import dataclass
from math import isfinite

from ..crypto import H, u64
from ..membership import Roster

ELECTION_TAG = b"beaconbft/leader"
TREE_TAG = b"beaconbft/tree"


class ElectionError(ValueError):
    pass


def elect_leader(randomness: bytes, view: int, roster: Roster) -> str:
    members = roster.ids
    if not members:
        raise ElectionError("empty roster")
    k = int.from_bytes(H(ELECTION_TAG, randomness, u64(view)), "big") % len(members)
    return members[k]


@dataclass(frozen=True)
class CommTree:
    leader: str
    subleaders: tuple[str, ...]
    # children[i] are the leaves attached to subleaders[i]
    children: tuple[tuple[str, ...], ...]
    branching: int

    def parent_of(self, node: str) -> str | None:
        if node == self.leader:
            return None
        if node in self.subleaders:
            return self.leader
        for sub, leaves in zip(self.subleaders, self.children):
            if node in leaves:
                return sub
        raise KeyError(node)

    def children_of(self, node: str) -> tuple[str, ...]:
        if node == self.leader:
            return self.subleaders
        try:
            return self.children[self.subleaders.index(node)]
        except ValueError:
            return ()

    @property
    def leaves(self) -> tuple[str, ...]:
        return tuple(x for group in self.children for x in group)

    @property
    def depth(self) -> int:
        return 2 if self.leaves else 1

    def nodes(self) -> list[str]:
        return [self.leader, *self.subleaders, *self.leaves]


def build_tree(randomness: bytes, view: int, roster: Roster, g: int) -> CommTree:
    """Leader from ``elect_leader``; the rest are ordered by a per-view hash and
    the first ``g`` become subleaders, with leaves dealt round-robin."""
    if g < 1:
        raise ElectionError("branching must be >= 1")
    leader = elect_leader(randomness, view, roster)
    rest = sorted(
        (m for m in roster.ids if m != leader),
        key=lambda m: H(TREE_TAG, randomness, u64(view), m.encode()),
    )
    subleaders = tuple(rest[:g])
    leaves = rest[g:]
    children = tuple(tuple(leaves[i :: len(subleaders)]) for i in range(len(subleaders)))
    return CommTree(leader, subleaders, children, g)


def default_branching(n: int) -> int:
    """At least 3, otherwise about sqrt(n) so subtrees stay balanced."""
    g = 3
    while g * g < n - 1:
        g += 1
    return g


def streak_probability(malicious_fraction: float, d: int) -> float:
    """Probability that ``d`` consecutive independently elected leaders are all malicious."""
    if not isfinite(malicious_fraction) or not 0.0 <= malicious_fraction <= 1.0:
        raise ValueError(f"malicious_fraction must be in [0, 1], got {malicious_fraction}")
    if d < 0:
        raise ValueError("d must be non-negative")
    return malicious_fraction**d
