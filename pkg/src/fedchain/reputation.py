"""Reward-penalty trust scores for trainers.

Raw scores are non-negative reals updated additively from validation deltas
and clamped at zero; the published trust vector phi is the renormalization
of the raw scores (each in [0, 1], summing to 1). Zero is absorbing under
the additive rule: a trainer whose raw score hits 0 keeps phi = 0 until the
degenerate all-zero reset.
"""

from __future__ import annotations

from dataclasses import dataclass

DEFAULT_ETA = 10.0


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of validating one trainer's update in one round."""

    trainer_id: int
    round_id: int
    metric_before: float
    metric_after: float
    accepted: bool

    def __post_init__(self):
        for name in ("metric_before", "metric_after"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def delta(self) -> float:
        return self.metric_after - self.metric_before


@dataclass(frozen=True)
class TrustVector:
    """Raw scores and their normalization phi, keyed by trainer id."""

    raw: dict

    def __post_init__(self):
        if not self.raw:
            raise ValueError("trust vector needs at least one trainer")
        for tid, score in self.raw.items():
            if score < 0:
                raise ValueError(f"raw score for trainer {tid} is negative")
        object.__setattr__(self, "raw", dict(self.raw))

    @property
    def phi(self) -> dict:
        """Normalized scores; uniform when every raw score is zero."""
        total = sum(self.raw.values())
        if total <= 0.0:
            n = len(self.raw)
            return {tid: 1.0 / n for tid in self.raw}
        return {tid: score / total for tid, score in self.raw.items()}

    def trainer_ids(self) -> list:
        return sorted(self.raw)


def init_uniform(trainer_ids) -> TrustVector:
    """Every trainer starts with raw score 1, hence phi = 1/n."""
    ids = list(trainer_ids)
    if not ids:
        raise ValueError("trust vector needs at least one trainer")
    return TrustVector({tid: 1.0 for tid in ids})


def apply_report(tv: TrustVector, report: ValidationReport,
                 eta: float = DEFAULT_ETA) -> TrustVector:
    """Additive-with-clamp update: raw += eta * (after - before), floored at 0.

    Zero is absorbing: a dismissed trainer stays at raw 0 no matter how its
    later updates score (only the degenerate all-zero reset, which is a
    property of the phi view, ever treats it as non-zero again).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if report.trainer_id not in tv.raw:
        raise ValueError(f"unknown trainer {report.trainer_id}")
    raw = dict(tv.raw)
    current = raw[report.trainer_id]
    if current > 0.0:
        raw[report.trainer_id] = max(0.0, current + eta * report.delta)
    return TrustVector(raw)


def merge_reports(reports) -> ValidationReport:
    """Average several validators' reports for the same (trainer, round).

    Keeps the policy independent of validator count: one effective report per
    update. Accepted iff any validator accepted.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to merge")
    first = reports[0]
    if any((r.trainer_id, r.round_id) != (first.trainer_id, first.round_id) for r in reports):
        raise ValueError("reports span multiple (trainer, round) keys")
    n = len(reports)
    return ValidationReport(
        trainer_id=first.trainer_id,
        round_id=first.round_id,
        metric_before=sum(r.metric_before for r in reports) / n,
        metric_after=sum(r.metric_after for r in reports) / n,
        accepted=any(r.accepted for r in reports),
    )


def weights_for_round(tv: TrustVector, accepted_ids) -> list:
    """Phi restricted to the accepted trainers and renormalized.

    Returned in ascending trainer-id order. Falls back to uniform when the
    restricted scores are all zero.
    """
    ids = sorted(accepted_ids)
    if not ids:
        raise ValueError("accepted set is empty")
    unknown = [tid for tid in ids if tid not in tv.raw]
    if unknown:
        raise ValueError(f"unknown trainers in accepted set: {unknown}")
    phi = tv.phi
    total = sum(phi[tid] for tid in ids)
    if total <= 0.0:
        return [1.0 / len(ids)] * len(ids)
    return [phi[tid] / total for tid in ids]
