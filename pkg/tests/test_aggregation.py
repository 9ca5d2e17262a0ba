import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedchain.aggregation import (AggregationInput, NoAcceptedUpdates, aggregate,
                                  uniform_weights)
from fedchain.params import FlatParams, GradientUpdate


def _upd(tid, delta, version=0):
    return GradientUpdate(trainer_id=tid, base_version=version,
                          delta=np.asarray(delta, dtype=float), steps=1)


def test_uniform_weights_mean():
    out = aggregate(AggregationInput(
        base=FlatParams([0.0, 0.0]),
        updates=[(_upd(0, [1, 3]), 0.5), (_upd(1, [3, 5]), 0.5)]))
    assert list(out.values) == [2.0, 4.0]


def test_degenerate_weight_applies_single_delta_exactly():
    base = FlatParams([0.25, -1.0])
    delta = np.array([0.125, 0.5])
    out = aggregate(AggregationInput(base=base,
                                     updates=[(_upd(0, delta), 1.0), (_upd(1, [9, 9]), 0.0)]))
    assert np.array_equal(out.values, base.values + delta)


def test_weighted_arithmetic():
    out = aggregate(AggregationInput(
        base=FlatParams([1.0, 1.0]),
        updates=[(_upd(0, [4, 0]), 0.75), (_upd(1, [0, 8]), 0.25)]))
    assert list(out.values) == [4.0, 3.0]


def test_no_accepted_updates_signals_round_skip():
    base = FlatParams([1.0])
    with pytest.raises(NoAcceptedUpdates):
        aggregate(AggregationInput(base=base, updates=[(_upd(0, [2.0]), 0.0)]))
    with pytest.raises(NoAcceptedUpdates):
        aggregate(AggregationInput(base=base, updates=[(_upd(0, [2.0]), 1.0)],
                                   accepted_mask=[False]))


def test_uniform_weights_values():
    assert uniform_weights(1) == [1.0]
    assert uniform_weights(4) == [0.25] * 4
    six = uniform_weights(6)
    assert len(six) == 6 and all(abs(w - 0.16667) < 1e-5 for w in six)
    with pytest.raises(ValueError):
        uniform_weights(0)


def test_dim_and_version_checks():
    with pytest.raises(ValueError, match="dim"):
        AggregationInput(base=FlatParams([0.0, 0.0]), updates=[(_upd(0, [1.0]), 1.0)])
    with pytest.raises(ValueError, match="versions"):
        AggregationInput(base=FlatParams([0.0]),
                         updates=[(_upd(0, [1.0], version=0), 1.0),
                                  (_upd(1, [1.0], version=1), 1.0)])


@st.composite
def _instances(draw):
    dim = draw(st.integers(1, 6))
    k = draw(st.integers(1, 5))
    vec = st.lists(st.floats(-100, 100, allow_nan=False, width=64),
                   min_size=dim, max_size=dim)
    base = draw(vec)
    deltas = [draw(vec) for _ in range(k)]
    weights = draw(st.lists(st.floats(0.01, 1.0, allow_nan=False), min_size=k, max_size=k))
    return base, deltas, weights


@settings(max_examples=100)
@given(_instances())
def test_uniform_aggregate_matches_arithmetic_mean_oracle(instance):
    base, deltas, _ = instance
    k = len(deltas)
    out = aggregate(AggregationInput(
        base=FlatParams(base),
        updates=[(_upd(i, d), 1.0 / k) for i, d in enumerate(deltas)]))
    oracle = np.asarray(base) + np.mean(np.asarray(deltas), axis=0)
    assert np.max(np.abs(out.values - oracle)) < 1e-12 * max(1.0, np.abs(oracle).max())


@settings(max_examples=100)
@given(_instances(), st.floats(0.001, 1000.0, allow_nan=False))
def test_weight_scale_invariance(instance, scale):
    base, deltas, weights = instance
    updates = [(_upd(i, d), w) for i, (d, w) in enumerate(zip(deltas, weights))]
    scaled = [(u, w * scale) for u, w in updates]
    a = aggregate(AggregationInput(base=FlatParams(base), updates=updates))
    b = aggregate(AggregationInput(base=FlatParams(base), updates=scaled))
    assert np.max(np.abs(a.values - b.values)) < 1e-12 * max(1.0, np.abs(a.values).max())


def test_excluded_updates_have_exactly_zero_influence():
    base = FlatParams([1.0, 2.0])
    kept = [(_upd(0, [0.1, 0.2]), 0.7), (_upd(2, [0.5, -0.5]), 0.3)]
    with_excluded = [kept[0], (_upd(1, [99.0, 99.0]), 0.0), kept[1],
                     (_upd(3, [-99.0, 1.0]), 0.9)]
    mask = [True, True, True, False]
    a = aggregate(AggregationInput(base=base, updates=with_excluded, accepted_mask=mask))
    b = aggregate(AggregationInput(base=base, updates=kept))
    assert np.array_equal(a.values, b.values)  # bit-identical


def test_summation_order_is_fixed_by_trainer_id():
    base = FlatParams([0.0])
    updates = [(_upd(2, [0.3]), 1.0), (_upd(0, [0.1]), 1.0), (_upd(1, [0.2]), 1.0)]
    a = aggregate(AggregationInput(base=base, updates=updates))
    b = aggregate(AggregationInput(base=base, updates=list(reversed(updates))))
    assert np.array_equal(a.values, b.values)
