from __future__ import annotations

import pytest

from beaconbft.consensus.certificates import sign_vote, verify_certificate
from beaconbft.consensus.replica import NotLeader, ProtocolConfig, Send
from beaconbft.consensus.types import (
    BlockProposal,
    Certified,
    Phase,
    Proposal,
    ViewChange,
    Vote,
    VoteBatch,
    proposal_message,
)

from .conftest import Network


def leader_and_followers(net: Network, view: int = 0):
    any_replica = next(iter(net.replicas.values()))
    leader = any_replica.leader_of(view)
    return net.replicas[leader], [r for nid, r in net.replicas.items() if nid != leader]


def all_at_height(h):
    return lambda net: all(r.height >= h for nid, r in net.replicas.items() if nid not in net.down)


def test_happy_path_commits_one_certified_block():
    net = Network(4)
    net.start()
    net.run(until=50, stop=all_at_height(1))
    logs = [r.log for r in net.replicas.values()]
    assert all(len(log) == 1 for log in logs)
    assert len({log[0][0].digest for log in logs}) == 1
    block, cert = logs[0][0]
    assert cert.block_digest == block.digest and verify_certificate(cert, net.roster)
    assert {n.view for _, _, n in net.events("commit")} == {0}


def test_two_of_four_votes_do_not_lock():
    net = Network(4)
    leader, followers = leader_and_followers(net)
    net.down = {followers[0].id, followers[1].id}
    net.start()
    net.run(until=3.0)
    assert net.events("lock") == []
    assert all(r.height == 0 for r in net.replicas.values())


def test_duplicate_vote_is_counted_once():
    net = Network(4)
    leader, followers = leader_and_followers(net)
    out = leader.start(0.0)
    proposal = next(e.msg for e in out if isinstance(e, Send) and isinstance(e.msg, Proposal))
    digest = proposal.block.digest
    a, b = followers[0], followers[1]
    va = sign_vote(a.key, a.id, Phase.PREPARE, digest, 0, 0)
    assert not any(isinstance(e.msg, Certified) for e in leader.on_message(va, 0.1) if isinstance(e, Send))
    again = leader.on_message(va, 0.2)
    assert not any(isinstance(e, Send) and isinstance(e.msg, Certified) for e in again)
    assert len(leader.votes[va.key]) == 2
    vb = sign_vote(b.key, b.id, Phase.PREPARE, digest, 0, 0)
    sends = [e for e in leader.on_message(vb, 0.3) if isinstance(e, Send)]
    assert any(isinstance(e.msg, Certified) for e in sends)


def test_vote_with_bad_signature_is_dropped():
    net = Network(4)
    leader, followers = leader_and_followers(net)
    leader.start(0.0)
    digest = leader.proposals[0].block.digest
    a = followers[0]
    forged = Vote(a.id, Phase.PREPARE, digest, 0, 0, bytes(64))
    out = leader.on_message(forged, 0.1)
    assert any(getattr(e, "event", None) == "drop" for e in out)
    assert a.id not in leader.votes[forged.key]


def test_propose_takes_a_canonical_prefix():
    net = Network(4, config=ProtocolConfig(block_cap=3))
    leader, followers = leader_and_followers(net)
    assert leader.propose([]).payload == ()
    txs = [b"e", b"b", b"d", b"a", b"c"]
    assert leader.propose(txs).payload == (b"a", b"b", b"c")
    with pytest.raises(NotLeader):
        followers[0].propose(txs)


def test_timeout_doubles_per_view_change():
    net = Network(4, config=ProtocolConfig(timeout_base=4.0))
    r = next(iter(net.replicas.values()))
    assert r.phase_timeout() == 4.0
    r.view = r.height_first_view + 1
    assert r.phase_timeout() == 8.0
    r.view = r.height_first_view + 2
    assert r.phase_timeout() == 16.0


def test_view_change_message_is_broadcast_without_leaving_the_view():
    net = Network(4)
    r = next(iter(net.replicas.values()))
    r.start(0.0)
    out = r.view_change(4.0)
    vcs = [e for e in out if isinstance(e, Send) and isinstance(e.msg, ViewChange)]
    assert {e.dest for e in vcs} == set(net.roster.ids) - {r.id}
    assert all(e.msg.view == 1 for e in vcs)
    assert r.view == 0


def test_timeout_without_a_lock_allows_a_fresh_block():
    net = Network(4)
    leader, _ = leader_and_followers(net)
    net.down = {leader.id}
    net.start()
    net.run(until=200, stop=all_at_height(1))
    (commit,) = {(n.digest, n.view) for _, nid, n in net.events("commit")}
    assert commit[1] >= 1
    proposals = [n for _, _, n in net.events("propose")]
    assert proposals and not proposals[0].extra["reproposal"]


def test_lock_is_carried_into_the_next_view():
    net = Network(4)
    leader, _ = leader_and_followers(net)

    def drop_view0_commit_votes(src, dst, msg):
        if isinstance(msg, Vote):
            return msg.phase == Phase.COMMIT and msg.view == 0
        if isinstance(msg, VoteBatch):
            return any(v.phase == Phase.COMMIT and v.view == 0 for v in msg.votes)
        return False

    net.drop = drop_view0_commit_votes
    net.start()
    net.run(until=300, stop=all_at_height(1))
    locked = {n.digest for _, _, n in net.events("lock") if n.view == 0}
    assert len(locked) == 1
    commits = {(n.digest, n.view) for _, _, n in net.events("commit")}
    assert len(commits) == 1
    digest, view = commits.pop()
    assert digest in locked and view >= 1
    assert any(n.extra["reproposal"] for _, _, n in net.events("propose") if n.view == view)


def test_lock_taken_after_a_timeout_is_reported_to_the_next_leader():
    net = Network(4)
    leader, followers = leader_and_followers(net)
    proposal = next(e.msg for e in leader.start(0.0) if isinstance(e, Send) and isinstance(e.msg, Proposal))
    r = next(f for f in followers if f.leader_of(1) != f.id)
    r.start(0.0)
    r.on_message(proposal, 0.1)
    r.view_change(4.0)
    digest = proposal.block.digest
    cert_msg = None
    for f in followers[:2]:
        vote = sign_vote(f.key, f.id, Phase.PREPARE, digest, 0, 0)
        for e in leader.on_message(vote, 0.2):
            if isinstance(e, Send) and isinstance(e.msg, Certified):
                cert_msg = e.msg
    assert cert_msg is not None
    out = r.on_message(cert_msg, 5.0)
    reports = [e for e in out if isinstance(e, Send) and isinstance(e.msg, ViewChange)]
    assert [e.dest for e in reports] == [r.leader_of(1)]
    assert reports[0].msg.view == 1 and reports[0].msg.lock.block_digest == digest


def test_equivocating_leader_is_flagged_and_gets_one_vote():
    net = Network(4)
    leader, followers = leader_and_followers(net)
    follower = followers[0]
    follower.start(0.0)
    blocks = [BlockProposal(0, 0, follower.tip, (tx,), leader.id) for tx in (b"a", b"b")]
    props = [Proposal(leader.id, 0, b, leader.key.sign(proposal_message(b.digest, 0))) for b in blocks]
    first = follower.on_message(props[0], 0.1)
    second = follower.on_message(props[1], 0.2)
    assert any(getattr(e, "event", None) == "equivocation" for e in second)
    assert leader.id in follower.flagged_leaders
    assert follower.prepare_voted == {0: blocks[0].digest}
    assert follower.my_votes[(Phase.PREPARE, 0)].block_digest == blocks[0].digest


def test_proposal_from_non_leader_is_dropped():
    net = Network(4)
    leader, followers = leader_and_followers(net)
    a, b = followers[0], followers[1]
    a.start(0.0)
    block = BlockProposal(0, 0, a.tip, (), b.id)
    p = Proposal(b.id, 0, block, b.key.sign(proposal_message(block.digest, 0)))
    out = a.on_message(p, 0.1)
    assert any(getattr(e, "event", None) == "drop" for e in out)
    assert 0 not in a.prepare_voted


def test_crashed_subleader_is_bypassed_in_a_two_level_tree():
    net = Network(10)
    leader, _ = leader_and_followers(net)
    tree = leader.tree(0)
    assert tree.depth == 2
    net.down = {tree.subleaders[0]}
    net.start()
    net.run(until=100, stop=all_at_height(1))
    assert all(r.height == 1 for nid, r in net.replicas.items() if nid not in net.down)
    assert {n.view for _, _, n in net.events("commit")} == {0}
