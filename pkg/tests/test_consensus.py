from itertools import combinations

import pytest

from fedchain import consensus as C


def test_quorum_sizes():
    assert C.quorum_size(3) == 3    # smallest integer > 2
    assert C.quorum_size(4) == 3    # smallest integer > 8/3
    assert C.quorum_size(10) == 7   # smallest integer > 20/3
    assert C.quorum_size(1) == 1
    with pytest.raises(ValueError):
        C.quorum_size(0)


def test_proposer_rotation():
    assert C.proposer_for(0, 0, ["A", "B", "C"]) == "A"
    assert C.proposer_for(0, 1, ["A", "B", "C"]) == "B"
    assert C.proposer_for(5, 0, ["A", "B", "C"]) == "C"


def test_quorum_intersection_contains_an_honest_validator():
    # any two quorums of size floor(2n/3)+1 overlap in > f validators
    for n in range(1, 11):
        q = C.quorum_size(n)
        f = (n - 1) // 3
        assert 2 * q - n >= f + 1
    # exhaustively for small n: every pair of quorum-sized subsets
    for n in (4, 5, 6, 7):
        q = C.quorum_size(n)
        f = (n - 1) // 3
        for a in combinations(range(n), q):
            for b in combinations(range(n), q):
                assert len(set(a) & set(b)) >= f + 1


def _value(label):
    payload = label.encode()
    return C.payload_digest(payload), payload


def _mk_node(vid, n=4, **kwargs):
    return C.ConsensusNode(vid, list(range(n)),
                           get_value=lambda h: _value(f"h{h}"), **kwargs)


def _broadcasts(actions, types=(C.Proposal, C.Vote)):
    return [a.message for a in actions
            if isinstance(a, C.Broadcast) and isinstance(a.message, types)]


def test_hand_traced_commit_n4():
    # proposal + 3 prevotes + 3 precommits for one digest commits it
    node = _mk_node(1)
    node.start(height=0)
    dig, payload = _value("h0")
    actions = node.handle(C.Proposal(0, 0, dig, payload, sender=0))
    votes = _broadcasts(actions, (C.Vote,))
    assert votes and votes[0].phase == C.PREVOTE and votes[0].digest == dig
    out = []
    out += node.handle(C.Vote(0, 0, C.PREVOTE, dig, sender=0))
    out += node.handle(C.Vote(0, 0, C.PREVOTE, dig, sender=2))  # + own = 3 = quorum
    precommits = [m for m in _broadcasts(out, (C.Vote,)) if m.phase == C.PRECOMMIT]
    assert precommits and precommits[0].digest == dig
    assert node.locked_digest == dig
    out = []
    out += node.handle(C.Vote(0, 0, C.PRECOMMIT, dig, sender=0))
    out += node.handle(C.Vote(0, 0, C.PRECOMMIT, dig, sender=2))
    commits = [a for a in out if isinstance(a, C.Commit)]
    assert len(commits) == 1
    assert commits[0].height == 0 and commits[0].digest == dig
    assert node.height == 1


def test_split_precommits_do_not_commit_and_timeout_rotates():
    node = _mk_node(1)
    node.start(height=0)
    dig_a, pay_a = _value("h0")
    dig_b = C.payload_digest(b"other")
    node.handle(C.Proposal(0, 0, dig_a, pay_a, sender=0))
    node.handle(C.Vote(0, 0, C.PRECOMMIT, dig_a, sender=0))
    node.handle(C.Vote(0, 0, C.PRECOMMIT, dig_a, sender=2))
    out = node.handle(C.Vote(0, 0, C.PRECOMMIT, dig_b, sender=3))
    assert not [a for a in out if isinstance(a, C.Commit)]  # 2 + 2 < quorum 3
    assert node.height == 0
    # precommit timeout advances the round; proposer rotates to validator 1
    node.handle(C.Timeout(0, 0, C.PREVOTE))
    out = node.handle(C.Timeout(0, 0, C.PRECOMMIT))
    assert node.round_id == 1
    assert C.proposer_for(0, 1, [0, 1, 2, 3]) == 1
    proposals = _broadcasts(out, (C.Proposal,))
    assert proposals and proposals[0].round_id == 1


def test_duplicate_vote_leaves_state_and_logs_evidence():
    node = _mk_node(1)
    node.start(height=0)
    vote = C.Vote(0, 0, C.PREVOTE, C.payload_digest(b"x"), sender=2)
    node.handle(vote)
    before = dict(node._votes)
    node.handle(vote)
    assert node._votes == before
    assert any("duplicate" in desc for _, desc in node.evidence)


def test_equivocating_vote_keeps_first_and_logs_evidence():
    node = _mk_node(1)
    node.start(height=0)
    d1, d2 = C.payload_digest(b"x"), C.payload_digest(b"y")
    node.handle(C.Vote(0, 0, C.PREVOTE, d1, sender=2))
    node.handle(C.Vote(0, 0, C.PREVOTE, d2, sender=2))
    assert node._votes[(0, C.PREVOTE)][2] == d1
    assert any("equivocating" in desc for _, desc in node.evidence)


def test_proposal_digest_mismatch_rejected():
    node = _mk_node(1)
    node.start(height=0)
    out = node.handle(C.Proposal(0, 0, C.payload_digest(b"claimed"), b"actual", sender=0))
    assert not _broadcasts(out, (C.Vote,))
    assert any("digest mismatch" in desc for _, desc in node.evidence)


def test_invalid_payload_draws_nil_prevote():
    node = C.ConsensusNode(1, [0, 1, 2, 3], get_value=lambda h: _value(f"h{h}"),
                           is_valid=lambda payload: False)
    node.start(height=0)
    dig, payload = _value("h0")
    out = node.handle(C.Proposal(0, 0, dig, payload, sender=0))
    votes = _broadcasts(out, (C.Vote,))
    assert votes and votes[0].digest == C.NIL


def test_lock_prevents_prevoting_other_values():
    node = _mk_node(1)
    node.start(height=0)
    dig_a, pay_a = _value("h0")
    node.handle(C.Proposal(0, 0, dig_a, pay_a, sender=0))
    node.handle(C.Vote(0, 0, C.PREVOTE, dig_a, sender=0))
    node.handle(C.Vote(0, 0, C.PREVOTE, dig_a, sender=2))
    assert node.locked_digest == dig_a
    node.handle(C.Timeout(0, 0, C.PRECOMMIT))
    assert node.round_id == 1
    dig_b, pay_b = C.payload_digest(b"rival"), b"rival"
    out = node.handle(C.Proposal(0, 1, dig_b, pay_b, sender=1))
    votes = [m for m in _broadcasts(out, (C.Vote,)) if m.phase == C.PREVOTE]
    assert votes and votes[0].digest == C.NIL


def test_commit_cert_catches_up_lagging_replica():
    node = _mk_node(3)
    node.start(height=0)
    dig, payload = _value("h0")
    votes = tuple(C.Vote(0, 0, C.PRECOMMIT, dig, sender=s) for s in (0, 1, 2))
    out = node.handle(C.CommitCert(0, dig, payload, votes, sender=0))
    commits = [a for a in out if isinstance(a, C.Commit)]
    assert commits and commits[0].digest == dig
    assert node.height == 1


def test_commit_cert_without_quorum_rejected():
    node = _mk_node(3)
    node.start(height=0)
    dig, payload = _value("h0")
    votes = tuple(C.Vote(0, 0, C.PRECOMMIT, dig, sender=s) for s in (0, 1))
    out = node.handle(C.CommitCert(0, dig, payload, votes, sender=0))
    assert not [a for a in out if isinstance(a, C.Commit)]
    assert any("quorum" in desc for _, desc in node.evidence)


def test_future_height_messages_buffered_and_replayed():
    node = _mk_node(1)
    node.start(height=0)
    dig1, pay1 = _value("h1")
    node.handle(C.Proposal(1, 0, dig1, pay1, sender=1))
    assert node._future
    dig0, pay0 = _value("h0")
    certs = tuple(C.Vote(0, 0, C.PRECOMMIT, dig0, sender=s) for s in (0, 2, 3))
    out = node.handle(C.CommitCert(0, dig0, pay0, certs, sender=0))
    assert node.height == 1
    # the buffered height-1 proposal was replayed: node prevoted on it
    votes = [m for m in _broadcasts(out, (C.Vote,)) if m.height == 1]
    assert votes


def test_message_encoding_round_trip():
    prop = C.Proposal(3, 1, C.payload_digest(b"p"), b"p", sender=2)
    vote = C.Vote(3, 1, C.PRECOMMIT, C.NIL, sender=0)
    cert = C.CommitCert(3, C.payload_digest(b"p"), b"p",
                        (C.Vote(3, 1, C.PRECOMMIT, C.payload_digest(b"p"), 1),),
                        sender=1)
    for msg in (prop, vote, cert):
        assert C.decode_message(C.encode_message(msg)) == msg


def test_past_height_messages_ignored():
    node = _mk_node(1)
    node.start(height=5)
    out = node.handle(C.Vote(2, 0, C.PREVOTE, C.payload_digest(b"z"), sender=0))
    assert out == []
