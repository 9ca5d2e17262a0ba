import numpy as np
import pytest

from fedchain import learner as L
from fedchain.params import FlatParams, GradientUpdate
from fedchain.validation import StaleUpdate, ValidatorConfig, validate_update


def _setup(tau=0.0):
    ds = L.generate_synthetic(3, 120, 4, 2)
    lcfg = L.LearnerConfig(learning_rate=0.2)
    vcfg = ValidatorConfig(validation_dataset=ds, learner_config=lcfg,
                           accept_tolerance=tau)
    base = L.init_params(lcfg, ds.d, ds.n_classes)
    return ds, lcfg, vcfg, base


def _upd(delta, version=0, tid=0):
    return GradientUpdate(trainer_id=tid, base_version=version,
                          delta=np.asarray(delta, float), steps=1)


def test_zero_delta_accepted_at_zero_tolerance():
    ds, _, vcfg, base = _setup(tau=0.0)
    report = validate_update(base, 0, _upd(np.zeros(base.dim)), vcfg)
    assert report.metric_after == report.metric_before
    assert report.accepted  # boundary is inclusive


def test_prediction_flipping_delta_rejected():
    # two-sample toy set: a fitted model, then a delta that inverts the logits
    ds = L.Dataset([[1.0, 0.0], [-1.0, 0.0]], [0, 1], 2)
    lcfg = L.LearnerConfig(learning_rate=0.5, batch_size=2)
    vcfg = ValidatorConfig(validation_dataset=ds, learner_config=lcfg)
    params = L.init_params(lcfg, 2, 2)
    for r in range(30):
        params = params + L.compute_gradient_steps(params, ds, lcfg, 1, round_id=r).delta
    assert L.evaluate(params, ds, lcfg) == 1.0
    flip = -2.0 * params.values  # inverts every logit ordering
    report = validate_update(params, 0, _upd(flip), vcfg)
    assert report.metric_after == 0.0
    assert not report.accepted


def test_full_tolerance_accepts_any_finite_update():
    ds, _, vcfg, base = _setup(tau=1.0)
    wild = np.full(base.dim, -50.0)
    assert validate_update(base, 0, _upd(wild), vcfg).accepted


def test_stale_update_rejected_unscored():
    _, _, vcfg, base = _setup()
    with pytest.raises(StaleUpdate, match="stale"):
        validate_update(base, 3, _upd(np.zeros(base.dim), version=1), vcfg)


def test_dimension_mismatch_is_error():
    _, _, vcfg, base = _setup()
    with pytest.raises(ValueError, match="dimension"):
        validate_update(base, 0, _upd([1.0, 2.0]), vcfg)


def test_determinism_across_validators_with_same_dataset():
    ds, lcfg, vcfg, base = _setup()
    rng = np.random.default_rng(5)
    upd = _upd(rng.normal(0, 0.1, base.dim))
    a = validate_update(base, 0, upd, vcfg)
    b = validate_update(base, 0, upd, vcfg)
    assert a == b


def test_accept_region_monotone_in_tolerance():
    ds, lcfg, _, base = _setup()
    rng = np.random.default_rng(9)
    taus = [0.0, 0.05, 0.2, 0.5, 1.0]
    for trial in range(10):
        upd = _upd(rng.normal(0, 0.5, base.dim))
        accepted = [validate_update(
            base, 0, upd,
            ValidatorConfig(validation_dataset=ds, learner_config=lcfg,
                            accept_tolerance=t)).accepted
            for t in taus]
        # once accepted at some tau, accepted at every larger tau
        assert accepted == sorted(accepted)
