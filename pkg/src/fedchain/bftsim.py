"""Randomized-schedule harness for the consensus protocol.

Runs n validators over the discrete-event substrate with seeded latency,
loss, and Byzantine injection, then checks agreement across the honest
ones. Honest validators run the real state machine in auto-propose mode
(every proposer has a value: an opaque per-proposer payload). Byzantine
profiles:

* silent:       sends nothing at all.
* equivocating: as proposer sends two different proposals to the two
                halves of its peers; votes for one digest to one half and
                a different digest to the other, in both phases.
* conflicting:  votes for random garbage digests (sometimes nil),
                regardless of protocol state.

A fork is two honest validators deciding different digests at the same
height; `run_harness` reports every one it finds (the safety property is
that there are none).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import consensus as cns
from .netsim import LatencyModel, Network, Scheduler
from .params import digest_bytes

SILENT = "silent"
EQUIVOCATING = "equivocating"
CONFLICTING = "conflicting"
BYZANTINE_PROFILES = (EQUIVOCATING, CONFLICTING, SILENT)


@dataclass(frozen=True)
class HarnessConfig:
    n_validators: int = 4
    n_byzantine: int = 0
    seed: int = 0
    target_heights: int = 2         # stop once every honest node decided these
    latency: LatencyModel = field(default_factory=lambda: LatencyModel(base=1.0))
    timeout_base: float = 8.0
    max_virtual_time: float = 20000.0
    max_events: int = 500_000


@dataclass
class HarnessResult:
    decided: dict                   # honest vid -> {height: digest}
    forks: list                     # (height, digest_a, digest_b)
    min_height_decided: int
    events: int
    virtual_time: float


def _proposal_value(height: int, proposer: int):
    payload = f"height={height} proposer={proposer}".encode()
    return digest_bytes(payload), payload


class _ByzantineValidator:
    """Reactive adversary: answers traffic with profile-specific poison."""

    def __init__(self, vid: int, profile: str, peers, rng):
        self.vid = vid
        self.profile = profile
        self.peers = peers          # honest + byzantine, excluding self
        self.rng = rng
        self._acted = set()         # (height, round) already poisoned
        half = len(peers) // 2
        self.half_a = peers[:half]
        self.half_b = peers[half:]

    def _garbage_digest(self) -> bytes:
        return bytes(self.rng.integers(0, 256, 32, dtype=np.uint8))

    def handle(self, msg, send):
        if self.profile == SILENT or isinstance(msg, cns.Timeout):
            return
        if not isinstance(msg, (cns.Proposal, cns.Vote, cns.CommitCert)):
            return
        height = msg.height
        round_id = getattr(msg, "round_id", 0)
        key = (height, round_id)
        if key in self._acted:
            return
        self._acted.add(key)
        if self.profile == EQUIVOCATING:
            dig_a, pay_a = _proposal_value(height, self.vid)
            dig_b = digest_bytes(pay_a + b"'")
            pay_b = pay_a + b"'"
            # conflicting proposals when the rotation makes this node proposer
            for half, dig, pay in ((self.half_a, dig_a, pay_a), (self.half_b, dig_b, pay_b)):
                for peer in half:
                    send(peer, cns.Proposal(height, round_id, dig, pay, self.vid))
                    for phase in (cns.PREVOTE, cns.PRECOMMIT):
                        send(peer, cns.Vote(height, round_id, phase, dig, self.vid))
        elif self.profile == CONFLICTING:
            for peer in self.peers:
                for phase in (cns.PREVOTE, cns.PRECOMMIT):
                    dig = cns.NIL if self.rng.random() < 0.3 else self._garbage_digest()
                    send(peer, cns.Vote(height, round_id, phase, dig, self.vid))


def run_harness(cfg: HarnessConfig) -> HarnessResult:
    """One seeded schedule; returns decisions and any forks found."""
    n = cfg.n_validators
    validators = list(range(n))
    byz_ids = validators[n - cfg.n_byzantine:] if cfg.n_byzantine else []
    honest_ids = [v for v in validators if v not in byz_ids]

    scheduler = Scheduler()
    rng = np.random.default_rng([cfg.seed, 41])
    network = Network(scheduler, cfg.latency, rng)

    honest = {}
    for vid in honest_ids:
        honest[vid] = cns.ConsensusNode(
            vid, validators,
            get_value=lambda h, v=vid: _proposal_value(h, v),
            timeout_base=cfg.timeout_base,
            auto_propose=True)
    byzantine = {}
    for i, vid in enumerate(byz_ids):
        profile = BYZANTINE_PROFILES[i % len(BYZANTINE_PROFILES)]
        peers = [v for v in validators if v != vid]
        byzantine[vid] = _ByzantineValidator(
            vid, profile, peers, np.random.default_rng([cfg.seed, 42, vid]))

    decided = {vid: {} for vid in honest_ids}

    def dispatch_actions(vid: int, actions):
        for act in actions:
            if isinstance(act, cns.Broadcast):
                for peer in validators:
                    if peer != vid:
                        network.send(str(peer), act.message)
            elif isinstance(act, cns.Schedule):
                scheduler.schedule(act.delay, str(vid), act.timeout)
            elif isinstance(act, cns.Commit):
                decided[vid][act.height] = act.digest

    for vid in honest_ids:
        dispatch_actions(vid, honest[vid].start(height=0))

    def goal_met() -> bool:
        return all(len(d) >= cfg.target_heights for d in decided.values())

    events = 0
    while not goal_met():
        ev = scheduler.pop()
        if ev is None or scheduler.now > cfg.max_virtual_time:
            break
        events += 1
        if events > cfg.max_events:
            break
        vid = int(ev.target)
        if vid in honest:
            dispatch_actions(vid, honest[vid].handle(ev.payload))
        elif vid in byzantine:
            byzantine[vid].handle(ev.payload, lambda peer, m: network.send(str(peer), m))

    forks = []
    for h in sorted({h for d in decided.values() for h in d}):
        digs = {d[h] for d in decided.values() if h in d}
        if len(digs) > 1:
            digs = sorted(digs)
            forks.append((h, digs[0], digs[1]))
    min_decided = min((len(d) for d in decided.values()), default=0)
    return HarnessResult(decided=decided, forks=forks, min_height_decided=min_decided,
                         events=events, virtual_time=scheduler.now)


def max_byzantine(n: int) -> int:
    """Largest f with n >= 3f + 1."""
    return (n - 1) // 3
