"""Trust-weighted federated averaging of accepted gradient updates.

The next model is ``base + sum_i w_hat_i * delta_i`` over the accepted
updates, where the weights are renormalized over the accepted subset. The
summation order is fixed (ascending trainer id) so replicas produce
bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import FlatParams, GradientUpdate


class NoAcceptedUpdates(Exception):
    """Round yields no new model: no accepted update carries positive weight."""


@dataclass(frozen=True)
class AggregationInput:
    base: FlatParams
    updates: list            # of (GradientUpdate, trust weight in [0, 1])
    accepted_mask: list = field(default=None)  # defaults to all-accepted

    def __post_init__(self):
        mask = self.accepted_mask
        if mask is None:
            mask = [True] * len(self.updates)
        if len(mask) != len(self.updates):
            raise ValueError("accepted_mask length must match updates")
        object.__setattr__(self, "accepted_mask", list(mask))
        versions = set()
        for update, weight in self.updates:
            if update.dim != self.base.dim:
                raise ValueError(f"update dim {update.dim} does not match base dim {self.base.dim}")
            if not 0.0 <= weight:
                raise ValueError("trust weights must be non-negative")
            versions.add(update.base_version)
        if len(versions) > 1:
            raise ValueError(f"updates span multiple base versions: {sorted(versions)}")


def aggregate(inp: AggregationInput) -> FlatParams:
    """Apply the renormalized trust-weighted average of accepted deltas.

    Raises :class:`NoAcceptedUpdates` when no accepted update has positive
    weight; the caller skips the round and keeps the current version.
    """
    chosen = [(u, w) for (u, w), ok in zip(inp.updates, inp.accepted_mask) if ok and w > 0.0]
    if not chosen:
        raise NoAcceptedUpdates("no accepted update with positive weight")
    chosen.sort(key=lambda uw: uw[0].trainer_id)
    total = sum(w for _, w in chosen)
    out = inp.base.values.copy()
    for update, weight in chosen:
        out += (weight / total) * update.delta
    if not np.all(np.isfinite(out)):
        raise ValueError("aggregation produced non-finite parameters")
    return FlatParams(out)


def uniform_weights(k: int) -> list:
    """Equal weights 1/k for k accepted updates."""
    if k < 1:
        raise ValueError("need at least one accepted update")
    return [1.0 / k] * k
