"""Voting-based BFT replication: two-phase (prevote/precommit) consensus.

Each height runs numbered rounds with a rotating proposer. A validator
prevotes a valid proposal unless locked on a different one, locks once it
sees a quorum of prevotes (a polka) for a digest, precommits its lock, and
commits on a quorum of precommits. Timeouts double per round, so liveness
returns once message delays are bounded. Quorum is the smallest integer
strictly greater than 2n/3, tolerating f Byzantine validators for
n >= 3f + 1.

Payloads are opaque bytes here; the application supplies proposal contents
and a validity predicate. Two driving modes:

* auto_propose=True: the proposer always has a value (``get_value`` must
  return one) and rounds run back to back. Used by the randomized schedule
  harness.
* auto_propose=False: the proposer stays quiet until the application calls
  ``propose_now`` (or ``get_value`` returns a value after a view change);
  timers only arm once a height sees traffic. Used by validator nodes,
  whose blocks become due at synchronization-round boundaries.

Committing broadcasts a commit certificate (the quorum of precommits plus
the payload) so replicas that missed votes catch up deterministically. All
nondeterminism enters through the message schedule, so runs replay exactly
from a seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .params import digest_bytes

PROPOSE = "propose"
PREVOTE = "prevote"
PRECOMMIT = "precommit"

NIL = b""  # vote for "no proposal this round"


def quorum_size(n: int) -> int:
    """Smallest integer strictly greater than 2n/3."""
    if n < 1:
        raise ValueError("need at least one validator")
    return (2 * n) // 3 + 1


def proposer_for(height: int, round_id: int, validator_list) -> int:
    """Deterministic round-robin rotation over the validator list."""
    if not validator_list:
        raise ValueError("validator list is empty")
    return validator_list[(height + round_id) % len(validator_list)]


@dataclass(frozen=True)
class Proposal:
    height: int
    round_id: int
    digest: bytes
    payload: bytes
    sender: int


@dataclass(frozen=True)
class Vote:
    height: int
    round_id: int
    phase: str       # PREVOTE or PRECOMMIT
    digest: bytes    # NIL for nil votes
    sender: int


@dataclass(frozen=True)
class CommitCert:
    """A committed payload plus the precommit quorum that justifies it."""

    height: int
    digest: bytes
    payload: bytes
    votes: tuple     # of Vote(phase=PRECOMMIT)
    sender: int


@dataclass(frozen=True)
class Timeout:
    height: int
    round_id: int
    phase: str


# Actions emitted by the state machine for the driver to carry out.
@dataclass(frozen=True)
class Broadcast:
    message: object


@dataclass(frozen=True)
class Schedule:
    delay: float
    timeout: Timeout


@dataclass(frozen=True)
class Commit:
    height: int
    digest: bytes
    payload: bytes


def _enc_bytes(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def _dec_bytes(data: bytes, off: int):
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    return data[off:off + n], off + n


_PHASE_CODE = {PREVOTE: 0, PRECOMMIT: 1}
_PHASE_NAME = {v: k for k, v in _PHASE_CODE.items()}


def encode_message(msg) -> bytes:
    """Canonical binary encoding (little-endian, length-prefixed payloads)."""
    if isinstance(msg, Proposal):
        return (b"P" + struct.pack("<QQq", msg.height, msg.round_id, msg.sender)
                + _enc_bytes(msg.digest) + _enc_bytes(msg.payload))
    if isinstance(msg, Vote):
        return (b"V" + struct.pack("<QQqB", msg.height, msg.round_id, msg.sender,
                                   _PHASE_CODE[msg.phase])
                + _enc_bytes(msg.digest))
    if isinstance(msg, CommitCert):
        body = b"".join(_enc_bytes(encode_message(v)) for v in msg.votes)
        return (b"C" + struct.pack("<Qq", msg.height, msg.sender)
                + _enc_bytes(msg.digest) + _enc_bytes(msg.payload)
                + struct.pack("<I", len(msg.votes)) + body)
    raise TypeError(f"cannot encode {type(msg).__name__}")


def decode_message(data: bytes):
    tag, off = data[:1], 1
    if tag == b"P":
        height, round_id, sender = struct.unpack_from("<QQq", data, off)
        off += 24
        dig, off = _dec_bytes(data, off)
        payload, off = _dec_bytes(data, off)
        return Proposal(height, round_id, dig, payload, sender)
    if tag == b"V":
        height, round_id, sender, phase = struct.unpack_from("<QQqB", data, off)
        off += 25
        dig, off = _dec_bytes(data, off)
        return Vote(height, round_id, _PHASE_NAME[phase], dig, sender)
    if tag == b"C":
        height, sender = struct.unpack_from("<Qq", data, off)
        off += 16
        dig, off = _dec_bytes(data, off)
        payload, off = _dec_bytes(data, off)
        (n_votes,) = struct.unpack_from("<I", data, off)
        off += 4
        votes = []
        for _ in range(n_votes):
            raw, off = _dec_bytes(data, off)
            votes.append(decode_message(raw))
        return CommitCert(height, dig, payload, tuple(votes), sender)
    raise ValueError(f"unknown message tag {tag!r}")


def payload_digest(payload: bytes) -> bytes:
    """Default digest for proposal payloads."""
    return digest_bytes(payload)


class ConsensusNode:
    """Single validator's consensus state machine.

    ``handle(msg)`` consumes a Proposal, Vote, CommitCert, or Timeout and
    returns a list of actions (Broadcast, Schedule, Commit) for the driver,
    which owns delivery and the virtual clock.
    """

    def __init__(self, validator_id: int, validators, get_value=None, is_valid=None,
                 digest_fn=payload_digest, timeout_base: float = 10.0,
                 auto_propose: bool = True):
        self.validator_id = validator_id
        self.validators = list(validators)
        if validator_id not in self.validators:
            raise ValueError("validator_id must appear in the validator list")
        self.quorum = quorum_size(len(self.validators))
        self.get_value = get_value or (lambda height: None)
        self.is_valid = is_valid or (lambda payload: True)
        self.digest_fn = digest_fn
        self.timeout_base = timeout_base
        self.auto_propose = auto_propose

        self.height = 0
        self.round_id = 0
        self.step = PROPOSE
        self.locked_digest = None
        self.locked_round = -1
        self.decided = {}           # height -> (digest, payload)
        self.evidence = []          # (sender, description)

        self._proposals = {}        # round -> Proposal (current height)
        self._payloads = {}         # digest -> payload bytes (current height)
        self._votes = {}            # (round, phase) -> {sender: digest}
        self._proposed_rounds = set()
        self._future = []           # buffered messages for later heights
        self._hot = False           # height has seen traffic (arms timers)
        self._started = False

    # -- lifecycle -----------------------------------------------------------

    def start(self, height: int = 0):
        """Enter the first height; returns initial actions."""
        self._started = True
        self.height = height
        return self._new_round(0)

    def _timeout_delay(self, round_id: int) -> float:
        return self.timeout_base * (2.0 ** round_id)

    def _schedule(self, phase: str):
        return Schedule(self._timeout_delay(self.round_id),
                        Timeout(self.height, self.round_id, phase))

    def _new_round(self, round_id: int):
        self.round_id = round_id
        self.step = PROPOSE
        out = []
        if proposer_for(self.height, round_id, self.validators) == self.validator_id:
            if self.locked_digest is not None:
                out.extend(self._broadcast_proposal(self.locked_digest,
                                                    self._payloads[self.locked_digest]))
            else:
                value = self.get_value(self.height) if (self.auto_propose or self._hot) else None
                if value is not None:
                    out.extend(self._broadcast_proposal(*value))
        if self.auto_propose or self._hot:
            out.append(self._schedule(PROPOSE))
        # messages for this round may have arrived before we entered it
        early = self._proposals.get(round_id)
        if early is not None and self.step == PROPOSE:
            out.extend(self._prevote_on(early))
        out.extend(self._check_polka(round_id))
        out.extend(self._check_commit())
        return out

    def _broadcast_proposal(self, dig: bytes, payload: bytes):
        self._proposed_rounds.add(self.round_id)
        prop = Proposal(self.height, self.round_id, dig, payload, self.validator_id)
        out = [Broadcast(prop)]
        out.extend(self.handle(prop))
        return out

    def propose_now(self, payload: bytes):
        """Application-triggered proposal (auto_propose=False mode).

        Ignored unless this validator is the current proposer, has not
        proposed this round, and is not locked (a lock re-proposes itself).
        """
        if proposer_for(self.height, self.round_id, self.validators) != self.validator_id:
            return []
        if self.round_id in self._proposed_rounds or self.locked_digest is not None:
            return []
        out = self._arm()
        out.extend(self._broadcast_proposal(self.digest_fn(payload), payload))
        return out

    def _arm(self):
        """First traffic at this height: arm the round's propose timer."""
        if self._hot:
            return []
        self._hot = True
        return [self._schedule(PROPOSE)] if self.step == PROPOSE else []

    # -- message handling ------------------------------------------------------

    def handle(self, msg):
        if not self._started:
            raise RuntimeError("call start() before handling messages")
        if isinstance(msg, Timeout):
            return self._on_timeout(msg)
        if msg.height < self.height:
            return []  # past heights are settled, not errors
        if msg.height > self.height:
            self._future.append(msg)
            return []
        if isinstance(msg, Proposal):
            return self._arm() + self._on_proposal(msg)
        if isinstance(msg, Vote):
            return self._arm() + self._on_vote(msg)
        if isinstance(msg, CommitCert):
            return self._on_cert(msg)
        raise TypeError(f"cannot handle {type(msg).__name__}")

    def _on_proposal(self, prop: Proposal):
        if prop.sender != proposer_for(self.height, prop.round_id, self.validators):
            self.evidence.append((prop.sender, f"proposal from non-proposer at round {prop.round_id}"))
            return []
        if self.digest_fn(prop.payload) != prop.digest:
            self.evidence.append((prop.sender, f"proposal digest mismatch at round {prop.round_id}"))
            return []
        existing = self._proposals.get(prop.round_id)
        if existing is not None:
            if existing.digest != prop.digest:
                self.evidence.append((prop.sender, f"equivocating proposal at round {prop.round_id}"))
            return []  # first proposal stands
        self._proposals[prop.round_id] = prop
        self._payloads[prop.digest] = prop.payload
        out = []
        if prop.round_id == self.round_id and self.step == PROPOSE:
            out.extend(self._prevote_on(prop))
        # A polka or a precommit quorum may have been waiting on this payload.
        out.extend(self._check_polka(prop.round_id))
        out.extend(self._check_commit())
        return out

    def _prevote_on(self, prop: Proposal):
        if self.locked_digest is not None and self.locked_digest != prop.digest:
            return self._cast_vote(PREVOTE, NIL)
        if self.is_valid(prop.payload):
            return self._cast_vote(PREVOTE, prop.digest)
        return self._cast_vote(PREVOTE, NIL)

    def _cast_vote(self, phase: str, dig: bytes):
        self.step = PREVOTE if phase == PREVOTE else PRECOMMIT
        vote = Vote(self.height, self.round_id, phase, dig, self.validator_id)
        out = [Broadcast(vote), self._schedule(phase)]
        out.extend(self.handle(vote))
        return out

    def _on_vote(self, vote: Vote):
        if vote.sender not in self.validators:
            self.evidence.append((vote.sender, "vote from unknown validator"))
            return []
        if vote.phase not in (PREVOTE, PRECOMMIT):
            self.evidence.append((vote.sender, f"malformed vote phase {vote.phase!r}"))
            return []
        log = self._votes.setdefault((vote.round_id, vote.phase), {})
        if vote.sender in log:
            kind = "equivocating" if log[vote.sender] != vote.digest else "duplicate"
            self.evidence.append((vote.sender, f"{kind} {vote.phase} at round {vote.round_id}"))
            return []  # first vote stands
        log[vote.sender] = vote.digest
        if vote.phase == PREVOTE:
            return self._check_polka(vote.round_id)
        return self._check_commit() + self._check_nil_precommits(vote.round_id)

    def _quorum_digest(self, round_id: int, phase: str):
        """Digest holding >= quorum votes at (round, phase), or None."""
        log = self._votes.get((round_id, phase))
        if not log or len(log) < self.quorum:
            return None
        counts = {}
        for dig in log.values():
            counts[dig] = counts.get(dig, 0) + 1
            if counts[dig] >= self.quorum:
                return dig
        return None

    def _check_polka(self, round_id: int):
        dig = self._quorum_digest(round_id, PREVOTE)
        if dig is None:
            return []
        out = []
        if dig != NIL:
            if round_id >= self.locked_round and dig in self._payloads:
                self.locked_digest = dig
                self.locked_round = round_id
            if round_id == self.round_id and self.step == PREVOTE:
                out.extend(self._cast_vote(PRECOMMIT, dig if dig in self._payloads else NIL))
        elif round_id == self.round_id and self.step == PREVOTE:
            out.extend(self._cast_vote(PRECOMMIT, NIL))
        return out

    def _check_nil_precommits(self, round_id: int):
        if round_id == self.round_id and self._quorum_digest(round_id, PRECOMMIT) == NIL:
            return self._new_round(self.round_id + 1)
        return []

    def _check_commit(self):
        for (round_id, phase) in list(self._votes):
            if phase != PRECOMMIT:
                continue
            dig = self._quorum_digest(round_id, PRECOMMIT)
            if dig is not None and dig != NIL and dig in self._payloads:
                votes = [Vote(self.height, round_id, PRECOMMIT, dig, sender)
                         for sender, d in sorted(self._votes[(round_id, phase)].items())
                         if d == dig]
                return self._commit(dig, votes)
        return []

    def _on_cert(self, cert: CommitCert):
        if cert.digest != self.digest_fn(cert.payload):
            self.evidence.append((cert.sender, "commit cert digest mismatch"))
            return []
        senders = set()
        for v in cert.votes:
            ok = (isinstance(v, Vote) and v.phase == PRECOMMIT and v.height == cert.height
                  and v.digest == cert.digest and v.sender in self.validators)
            if ok:
                senders.add(v.sender)
        if len(senders) < self.quorum:
            self.evidence.append((cert.sender, "commit cert lacks a quorum"))
            return []
        self._payloads[cert.digest] = cert.payload
        return self._commit(cert.digest, list(cert.votes))

    def _commit(self, dig: bytes, votes):
        payload = self._payloads[dig]
        height = self.height
        self.decided[height] = (dig, payload)
        cert = CommitCert(height, dig, payload, tuple(votes), self.validator_id)
        self.height += 1
        self.round_id = 0
        self.step = PROPOSE
        self.locked_digest = None
        self.locked_round = -1
        self._proposals = {}
        self._payloads = {}
        self._votes = {}
        self._proposed_rounds = set()
        self._hot = False
        out = [Commit(height, dig, payload), Broadcast(cert)]
        out.extend(self._new_round(0))
        replay, self._future = self._future, []
        for msg in replay:
            out.extend(self.handle(msg))
        return out

    def _on_timeout(self, t: Timeout):
        if t.height != self.height or t.round_id != self.round_id:
            return []  # stale timer
        if t.phase == PROPOSE and self.step == PROPOSE:
            return self._cast_vote(PREVOTE, NIL)
        if t.phase == PREVOTE and self.step == PREVOTE:
            return self._cast_vote(PRECOMMIT, NIL)
        if t.phase == PRECOMMIT and self.step == PRECOMMIT:
            return self._new_round(self.round_id + 1)
        return []
