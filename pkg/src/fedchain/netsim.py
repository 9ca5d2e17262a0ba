"""Deterministic discrete-event substrate: virtual clock, lossy links, behaviors.

Events are processed in (fire_at, seq) order where seq is a monotone
tie-breaker, so a run's event order is a pure function of (config, seed).
Message latency, loss, Byzantine behavior profiles, and trainer pace all
draw from generators seeded once per run.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .params import GradientUpdate

HONEST = "honest"
NOISY = "noisy"
LAZY = "lazy"
EQUIVOCATOR = "equivocator"
PROFILES = (HONEST, NOISY, LAZY, EQUIVOCATOR)


@dataclass(frozen=True)
class NodeBehavior:
    profile: str = HONEST
    sigma: float = 0.0           # noisy: stddev added to every delta entry
    skip_prob: float = 0.0       # lazy: chance of withholding a finished update
    pace_multiplier: float = 1.0  # virtual duration scale of one SGD step

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"unknown behavior profile {self.profile!r}")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError("sigma must be finite and non-negative")
        if not 0.0 <= self.skip_prob <= 1.0:
            raise ValueError("skip_prob must lie in [0, 1]")
        if not np.isfinite(self.pace_multiplier) or self.pace_multiplier <= 0:
            raise ValueError("pace_multiplier must be finite and positive")


@dataclass(frozen=True)
class LatencyModel:
    base: float = 1.0
    jitter: float = 0.0
    drop_prob: float = 0.0
    gst: float = None   # after this virtual time, nothing is dropped

    def __post_init__(self):
        if self.base < 0:
            raise ValueError("base latency must be non-negative")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob must lie in [0, 1]")


def deliver(latency: LatencyModel, rng: np.random.Generator, now: float):
    """Arrival time for a message sent now, or None if the link drops it."""
    before_gst = latency.gst is None or now < latency.gst
    if latency.drop_prob > 0.0 and before_gst and rng.random() < latency.drop_prob:
        return None
    arrival = now + latency.base
    if latency.jitter > 0.0:
        arrival += rng.uniform(0.0, latency.jitter)
    return arrival


def apply_noise(update: GradientUpdate, behavior: NodeBehavior,
                rng: np.random.Generator) -> GradientUpdate:
    """Offset a delta with N(0, sigma^2 I) noise for the noisy profile.

    Honest profiles (and sigma = 0) return the input unchanged without
    consuming randomness.
    """
    if behavior.profile != NOISY or behavior.sigma == 0.0:
        return update
    eps = rng.normal(0.0, behavior.sigma, update.dim)
    return GradientUpdate(trainer_id=update.trainer_id, base_version=update.base_version,
                          delta=update.delta + eps, steps=update.steps)


@dataclass(frozen=True)
class SimEvent:
    fire_at: float
    seq: int
    target: str
    payload: object


class Scheduler:
    """Virtual clock plus the (fire_at, seq)-ordered event queue."""

    def __init__(self):
        self.now = 0.0
        self._heap = []
        self._seq = 0

    def schedule_at(self, fire_at: float, target: str, payload) -> SimEvent:
        if fire_at < self.now:
            raise ValueError(f"cannot schedule into the past ({fire_at} < {self.now})")
        ev = SimEvent(fire_at, self._seq, target, payload)
        heapq.heappush(self._heap, (fire_at, ev.seq, ev))
        self._seq += 1
        return ev

    def schedule(self, delay: float, target: str, payload) -> SimEvent:
        return self.schedule_at(self.now + delay, target, payload)

    def pop(self):
        """Advance the clock to the next event and return it, or None."""
        if not self._heap:
            return None
        _, _, ev = heapq.heappop(self._heap)
        self.now = ev.fire_at
        return ev

    def peek_time(self):
        """fire_at of the next event, or None when the queue is empty."""
        return self._heap[0][0] if self._heap else None

    def __len__(self) -> int:
        return len(self._heap)


class Network:
    """Point-to-point message layer over a Scheduler with one LatencyModel."""

    def __init__(self, scheduler: Scheduler, latency: LatencyModel,
                 rng: np.random.Generator):
        self.scheduler = scheduler
        self.latency = latency
        self.rng = rng
        self.sent = 0
        self.dropped = 0

    def send(self, target: str, payload) -> None:
        self.sent += 1
        arrival = deliver(self.latency, self.rng, self.scheduler.now)
        if arrival is None:
            self.dropped += 1
            return
        self.scheduler.schedule_at(arrival, target, payload)


class DeadlockError(RuntimeError):
    """Event queue drained with the stop condition unmet."""
