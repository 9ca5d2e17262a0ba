import pytest

from fedchain.sync import (BAP, BSP, CLOSE, KEEP_OPEN, SSP, Extend, RoundState,
                           SyncPolicy, close_round, extra_steps_allowed,
                           grant_extension, on_submission, open_round, should_close)


def _rs(policy, submitted=(), total=6, opened=0.0, round_id=0):
    rs = open_round(policy, round_id, opened, total)
    for tid in submitted:
        rs, _ = on_submission(policy, rs, tid)
    return rs


def test_bsp_closes_at_strict_deadline():
    policy = SyncPolicy(scheme=BSP, period=60.0)
    rs = _rs(policy, submitted=[0, 1, 2, 3])
    assert should_close(policy, rs, 59.99) == KEEP_OPEN
    assert should_close(policy, rs, 60.0) == CLOSE  # late trainers dropped


def test_ssp_extends_proportionally_to_unfinished():
    policy = SyncPolicy(scheme=SSP, period=60.0, max_extension_steps=5)
    rs = _rs(policy, submitted=[0, 1, 2, 3])
    decision = should_close(policy, rs, 60.0)
    assert isinstance(decision, Extend)
    assert decision.by == pytest.approx(60.0 * (2 / 6))


def test_ssp_closes_after_single_extension():
    policy = SyncPolicy(scheme=SSP, period=60.0)
    rs = _rs(policy, submitted=[0, 1, 2, 3])
    rs = grant_extension(rs, 20.0)
    assert rs.deadline == pytest.approx(80.0)
    assert should_close(policy, rs, 79.0) == KEEP_OPEN
    assert should_close(policy, rs, 80.0) == CLOSE
    with pytest.raises(ValueError, match="one extension"):
        grant_extension(rs, 5.0)


def test_ssp_all_finished_closes_without_extension():
    policy = SyncPolicy(scheme=SSP, period=60.0)
    rs = _rs(policy, submitted=list(range(6)))
    assert should_close(policy, rs, 60.0) == CLOSE


def test_bap_threshold():
    policy = SyncPolicy(scheme=BAP, majority_ratio=0.6)
    assert should_close(policy, _rs(policy, [0, 1, 2]), 10.0) == KEEP_OPEN   # 0.5 < 0.6
    assert should_close(policy, _rs(policy, [0, 1, 2, 3]), 10.0) == CLOSE    # 0.667 >= 0.6


def test_bap_has_no_deadline():
    policy = SyncPolicy(scheme=BAP, majority_ratio=1.0)
    rs = _rs(policy, [0])
    assert rs.deadline is None
    assert should_close(policy, rs, 1e9) == KEEP_OPEN


def test_first_submission_recorded():
    policy = SyncPolicy(scheme=BSP, period=60.0)
    rs = open_round(policy, 0, 0.0, 6)
    rs, keep = on_submission(policy, rs, 3)
    assert keep and 3 in rs.submitted


def test_bsp_second_submission_rejected():
    policy = SyncPolicy(scheme=BSP, period=60.0)
    rs = _rs(policy, [3])
    rs2, keep = on_submission(policy, rs, 3)
    assert not keep
    assert rs2.submitted == rs.submitted


def test_bap_resubmission_supersedes():
    policy = SyncPolicy(scheme=BAP, majority_ratio=1.0)
    rs = _rs(policy, [3])
    rs2, keep = on_submission(policy, rs, 3)
    assert keep                      # caller replaces the pending update
    assert len(rs2.submitted) == 1   # set semantics


def test_ssp_resubmission_only_during_extension():
    policy = SyncPolicy(scheme=SSP, period=60.0, max_extension_steps=5)
    rs = _rs(policy, [3])
    _, keep = on_submission(policy, rs, 3)
    assert not keep
    rs = grant_extension(rs, 10.0)
    _, keep = on_submission(policy, rs, 3)
    assert keep


def test_submission_after_close_rejected():
    policy = SyncPolicy(scheme=BSP, period=60.0)
    rs = close_round(_rs(policy, [0]))
    with pytest.raises(ValueError, match="closed"):
        on_submission(policy, rs, 1)


def test_extra_steps_rules():
    policy = SyncPolicy(scheme=SSP, period=60.0, max_extension_steps=5)
    assert extra_steps_allowed(policy, trainer_finished=True, in_extension=True) == 5
    assert extra_steps_allowed(policy, trainer_finished=False, in_extension=True) == 0
    assert extra_steps_allowed(policy, trainer_finished=True, in_extension=False) == 0
    with pytest.raises(ValueError):
        extra_steps_allowed(SyncPolicy(scheme=BSP), True, True)


def test_ssp_round_length_bounded_by_two_periods():
    # extension = T * u with u <= 1, so deadline lands in [T, 2T]
    policy = SyncPolicy(scheme=SSP, period=60.0)
    for submitted in range(0, 6):
        rs = _rs(policy, list(range(submitted)))
        decision = should_close(policy, rs, 60.0)
        if isinstance(decision, Extend):
            assert 0.0 < decision.by <= 60.0
            assert 60.0 <= 60.0 + decision.by <= 120.0


def test_policy_validation():
    with pytest.raises(ValueError):
        SyncPolicy(scheme="ASP")
    with pytest.raises(ValueError):
        SyncPolicy(scheme=BSP, period=0.0)
    with pytest.raises(ValueError):
        SyncPolicy(scheme=BAP, majority_ratio=0.0)
