from __future__ import annotations

import json
from itertools import permutations

import pytest
from hypothesis import given, strategies as st

from beaconbft.crypto import SigningKey, u64
from beaconbft.membership import (
    Credential,
    ForgedCredential,
    Issuer,
    Roster,
    SybilRejected,
    UntrustedIssuer,
    admit,
    advance_epoch,
    issue_credential,
    nullifier_for,
    verify_credential,
)


@pytest.fixture
def issuer():
    return Issuer.create("passport-office", b"\x01" * 32)


def node_key(i: int) -> bytes:
    return SigningKey.derive(b"member", u64(i)).public_key


def trusted(*issuers: Issuer) -> dict[str, bytes]:
    return {i.issuer_id: i.verification_key for i in issuers}


def test_same_identity_gives_same_nullifier(issuer):
    a = issue_credential(issuer, b"alice", node_key(1))
    b = issue_credential(issuer, b"alice", node_key(2))
    assert a.nullifier == b.nullifier
    assert a.node_public_key != b.node_public_key


def test_distinct_identities_give_distinct_nullifiers():
    nulls = {nullifier_for("office", b"id-%d" % i) for i in range(10_000)}
    assert len(nulls) == 10_000


def test_credential_verifies_only_under_its_issuer(issuer):
    cred = issue_credential(issuer, b"alice", node_key(1))
    assert verify_credential(cred, issuer.verification_key)
    other = Issuer.create("elsewhere", b"\x02" * 32)
    assert not verify_credential(cred, other.verification_key)


def test_fresh_credential_is_admitted(issuer):
    roster = Roster()
    cred = issue_credential(issuer, b"alice", node_key(1))
    after = admit(roster, cred, trusted(issuer))
    assert len(after) == 1
    assert after.epoch == roster.epoch
    assert cred.nullifier in after.nullifier_set


def test_second_key_for_same_identity_is_a_sybil(issuer):
    roster = admit(Roster(), issue_credential(issuer, b"alice", node_key(1)), trusted(issuer))
    with pytest.raises(SybilRejected):
        admit(roster, issue_credential(issuer, b"alice", node_key(2)), trusted(issuer))


def test_untrusted_issuer_is_rejected(issuer):
    rogue = Issuer.create("rogue", b"\x03" * 32)
    with pytest.raises(UntrustedIssuer):
        admit(Roster(), issue_credential(rogue, b"alice", node_key(1)), trusted(issuer))


def test_forged_signature_is_rejected(issuer):
    cred = issue_credential(issuer, b"alice", node_key(1))
    forged = Credential(cred.issuer_id, cred.nullifier, node_key(9), cred.signature)
    with pytest.raises(ForgedCredential):
        admit(Roster(), forged, trusted(issuer))


def test_members_are_kept_in_canonical_order(issuer):
    roster = Roster()
    for i in (5, 1, 3):
        roster = admit(roster, issue_credential(issuer, b"id%d" % i, node_key(i)), trusted(issuer))
    assert list(roster.ids) == sorted(roster.ids)


def test_empty_epoch_only_bumps_the_counter(issuer):
    roster = admit(Roster(), issue_credential(issuer, b"a", node_key(1)), trusted(issuer))
    after, report = advance_epoch(roster, [], [], trusted(issuer))
    assert after.members == roster.members
    assert after.epoch == roster.epoch + 1
    assert report.rejected == () and report.unknown_leaves == ()


def test_three_joins_one_leave_on_four_members(issuer):
    creds = [issue_credential(issuer, b"id%d" % i, node_key(i)) for i in range(7)]
    roster, _ = advance_epoch(Roster(), creds[:4], [], trusted(issuer))
    after, report = advance_epoch(roster, creds[4:], [creds[0].node_id], trusted(issuer))
    assert len(after) == 4 + 3 - 1
    assert creds[0].nullifier in after.nullifier_set
    assert report.rejected == ()


def test_unknown_leave_is_reported(issuer):
    after, report = advance_epoch(Roster(), [], ["deadbeef"], trusted(issuer))
    assert report.unknown_leaves == ("deadbeef",)


def test_duplicate_nullifier_in_one_batch_admits_smallest_key(issuer):
    creds = [issue_credential(issuer, b"carol", node_key(i)) for i in range(3)]
    winner = min(creds, key=lambda c: c.node_public_key)
    for order in permutations(creds):
        after, report = advance_epoch(Roster(), list(order), [], trusted(issuer))
        assert after.ids == (winner.node_id,)
        assert len(report.rejected) == 2


def test_identity_that_left_can_rejoin_with_a_new_key(issuer):
    first = issue_credential(issuer, b"dave", node_key(1))
    roster, _ = advance_epoch(Roster(), [first], [], trusted(issuer))
    roster, _ = advance_epoch(roster, [], [first.node_id], trusted(issuer))
    again = issue_credential(issuer, b"dave", node_key(2))
    back, report = advance_epoch(roster, [again], [], trusted(issuer))
    assert back.ids == (again.node_id,)
    strict, report = advance_epoch(roster, [again], [], trusted(issuer), allow_rejoin=False)
    assert len(strict) == 0 and report.rejected[0][1] == "sybil"


def test_roster_json_round_trip(issuer):
    creds = [issue_credential(issuer, b"id%d" % i, node_key(i)) for i in range(3)]
    roster, _ = advance_epoch(Roster(), creds, [], trusted(issuer))
    obj = json.loads(json.dumps(roster.to_json()))
    assert set(obj) == {"epoch", "members", "nullifiers"}
    assert Roster.from_json(obj) == roster


batches = st.lists(st.tuples(st.integers(0, 5), st.integers(0, 30)), max_size=12)


@given(batches, st.randoms(use_true_random=False))
def test_joins_are_order_independent_and_sybil_free(pairs, rnd):
    issuer = Issuer.create("office", b"\x04" * 32)
    creds = [issue_credential(issuer, b"person%d" % ident, node_key(k)) for ident, k in pairs]
    shuffled = list(creds)
    rnd.shuffle(shuffled)
    a, _ = advance_epoch(Roster(), creds, [], trusted(issuer))
    b, _ = advance_epoch(Roster(), shuffled, [], trusted(issuer))
    assert a == b
    nulls = [m.nullifier for m in a.members]
    assert len(nulls) == len(set(nulls))
    assert len(a) <= len(a.nullifier_set)
    # open admission: every distinct fresh identity got in, unless its only keys were taken
    identities = {ident for ident, _ in pairs}
    assert len(a) <= len(identities)
