"""Per-update quality gate run by validators.

A candidate update is applied to the latest released model and scored on the
validator's held-out dataset; it is accepted when the metric does not drop by
more than the tolerance tau (tau = 0 recovers strict no-decline). Stale
updates, built against an older version, are rejected without scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import learner
from .learner import Dataset, LearnerConfig
from .params import FlatParams, GradientUpdate
from .reputation import ValidationReport


class StaleUpdate(Exception):
    """Update targets a superseded model version; rejected unscored."""


@dataclass(frozen=True)
class ValidatorConfig:
    validation_dataset: Dataset
    learner_config: LearnerConfig
    accept_tolerance: float = 0.0  # tau, in accuracy units

    def __post_init__(self):
        if self.accept_tolerance < 0:
            raise ValueError("accept_tolerance must be non-negative")


def validate_update(base_model: FlatParams, base_version: int, update: GradientUpdate,
                    cfg: ValidatorConfig, round_id: int = 0) -> ValidationReport:
    """Score ``base + delta`` against the validator's dataset.

    Raises :class:`StaleUpdate` when the update's base_version is behind the
    current released version, and ValueError on dimension mismatch.
    """
    if update.base_version != base_version:
        raise StaleUpdate(f"stale update: built on version {update.base_version}, "
                          f"current is {base_version}")
    if update.dim != base_model.dim:
        raise ValueError(f"dimension mismatch: update has {update.dim}, model has {base_model.dim}")
    before = learner.evaluate(base_model, cfg.validation_dataset, cfg.learner_config)
    after = learner.evaluate(base_model + update.delta, cfg.validation_dataset, cfg.learner_config)
    return ValidationReport(
        trainer_id=update.trainer_id,
        round_id=round_id,
        metric_before=before,
        metric_after=after,
        accepted=after >= before - cfg.accept_tolerance,
    )
