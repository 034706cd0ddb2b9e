from .certificates import (
    CertificateError,
    InsufficientVotes,
    MixedVotes,
    form_certificate,
    form_quorum,
    sign_vote,
    sync_from_certificates,
    verify_certificate,
    verify_vote,
)
from .election import CommTree, build_tree, default_branching, elect_leader, streak_probability
from .replica import NotLeader, ProtocolConfig, Replica
from .types import (
    GENESIS_DIGEST,
    BlockProposal,
    CommitCertificate,
    Phase,
    Proposal,
    QuorumCertificate,
    ViewChange,
    Vote,
)
