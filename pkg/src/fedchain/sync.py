"""Round lifecycle under the three synchronization schemes.

* BSP: fixed period T with a strict deadline; late updates are dropped.
* SSP: BSP plus at most one deadline extension of T * u, where u is the
  fraction of trainers unfinished at the original deadline. Trainers that
  already finished may train up to N extra steps during the extension and
  resubmit (the resubmission supersedes their first update).
* BAP: no deadline; the round closes once at least a ratio theta of
  trainers have submitted. Until then trainers keep training and resubmit,
  each resubmission superseding the previous one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

BSP = "BSP"
SSP = "SSP"
BAP = "BAP"
SCHEMES = (BSP, SSP, BAP)


@dataclass(frozen=True)
class SyncPolicy:
    scheme: str = BSP
    period: float = 100.0            # T, virtual time (BSP/SSP)
    max_extension_steps: int = 0     # N (SSP)
    majority_ratio: float = 1.0      # theta in (0, 1] (BAP)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme in (BSP, SSP) and self.period <= 0:
            raise ValueError("period must be positive for BSP/SSP")
        if not 0.0 < self.majority_ratio <= 1.0:
            raise ValueError("majority_ratio must lie in (0, 1]")
        if self.max_extension_steps < 0:
            raise ValueError("max_extension_steps must be non-negative")


@dataclass(frozen=True)
class RoundState:
    round_id: int
    opened_at: float
    total_trainers: int
    deadline: float = None           # None under BAP
    extension_granted: bool = False
    submitted: frozenset = field(default_factory=frozenset)
    closed: bool = False

    def submitted_ratio(self) -> float:
        return len(self.submitted) / self.total_trainers


def open_round(policy: SyncPolicy, round_id: int, now: float, total_trainers: int) -> RoundState:
    deadline = now + policy.period if policy.scheme in (BSP, SSP) else None
    return RoundState(round_id=round_id, opened_at=now, total_trainers=total_trainers,
                      deadline=deadline)


# Decisions returned by should_close.
KEEP_OPEN = "keep_open"
CLOSE = "close"


@dataclass(frozen=True)
class Extend:
    by: float


def should_close(policy: SyncPolicy, rs: RoundState, now: float):
    """Decide the round's fate at virtual time ``now``.

    Returns KEEP_OPEN, CLOSE, or Extend(by) for the single SSP extension.
    """
    if rs.closed:
        raise ValueError("round already closed")
    if policy.scheme == BAP:
        return CLOSE if rs.submitted_ratio() >= policy.majority_ratio else KEEP_OPEN
    if now < rs.deadline:
        return KEEP_OPEN
    if policy.scheme == SSP and not rs.extension_granted:
        unfinished = 1.0 - rs.submitted_ratio()
        if unfinished > 0.0:
            return Extend(by=policy.period * unfinished)
    return CLOSE


def grant_extension(rs: RoundState, by: float) -> RoundState:
    if rs.extension_granted:
        raise ValueError("at most one extension per round")
    return replace(rs, deadline=rs.deadline + by, extension_granted=True)


def on_submission(policy: SyncPolicy, rs: RoundState, trainer_id: int):
    """Record a submission; returns (new state, keep: bool).

    ``keep`` is False when the update must be ignored: duplicates under
    BSP, and under SSP outside an extension. BAP (and SSP during its
    extension) treat a resubmission as superseding, so keep is True and the
    caller replaces the trainer's pending update.
    """
    if rs.closed:
        raise ValueError("round closed: submission rejected")
    if trainer_id in rs.submitted:
        supersedes = policy.scheme == BAP or (policy.scheme == SSP and rs.extension_granted)
        return rs, supersedes
    return replace(rs, submitted=rs.submitted | {trainer_id}), True


def close_round(rs: RoundState) -> RoundState:
    return replace(rs, closed=True)


def extra_steps_allowed(policy: SyncPolicy, trainer_finished: bool, in_extension: bool) -> int:
    """SSP only: extra step budget for an already-finished trainer."""
    if policy.scheme != SSP:
        raise ValueError("extra steps only apply to SSP")
    if trainer_finished and in_extension:
        return policy.max_extension_steps
    return 0
