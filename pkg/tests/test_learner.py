import struct

import numpy as np
import pytest

from fedchain import learner as L
from fedchain.params import FlatParams


def finite_difference_gradient(vec, x, y, cfg, n_classes, h=1e-5):
    """Central differences on the mean cross-entropy; the independent oracle."""
    grad = np.zeros_like(vec)
    for i in range(len(vec)):
        up, down = vec.copy(), vec.copy()
        up[i] += h
        down[i] -= h
        lu, _ = L.loss_and_gradient(up, x, y, cfg, n_classes)
        ld, _ = L.loss_and_gradient(down, x, y, cfg, n_classes)
        grad[i] = (lu - ld) / (2 * h)
    return grad


# -- synthetic data ------------------------------------------------------------

def test_synthetic_deterministic_per_seed():
    a = L.generate_synthetic(7, 100, 4, 2)
    b = L.generate_synthetic(7, 100, 4, 2)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_synthetic_balanced_two_classes():
    ds = L.generate_synthetic(7, 100, 4, 2)
    counts = np.bincount(ds.labels)
    assert list(counts) == [50, 50]


def test_synthetic_balance_within_one():
    ds = L.generate_synthetic(3, 103, 4, 5)
    counts = np.bincount(ds.labels, minlength=5)
    assert counts.max() - counts.min() <= 1


def test_synthetic_seeds_differ():
    a = L.generate_synthetic(1, 50, 3, 2)
    b = L.generate_synthetic(2, 50, 3, 2)
    assert not np.array_equal(a.features, b.features)


def test_synthetic_rejects_bad_sizes():
    with pytest.raises(ValueError):
        L.generate_synthetic(1, 1, 4, 2)
    with pytest.raises(ValueError):
        L.generate_synthetic(1, 10, 0, 2)


# -- IDX ingestion ----------------------------------------------------------------

def write_idx_pair(tmp_path, images, labels, tag=""):
    """Byte-by-byte IDX files per the published format (big-endian headers)."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    img_path = tmp_path / f"imgs{tag}.idx"
    lbl_path = tmp_path / f"lbls{tag}.idx"
    with open(img_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.tobytes())
    with open(lbl_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))
    return img_path, lbl_path


def test_load_idx_hand_built_pair(tmp_path):
    images = [[[0, 128], [255, 64]], [[1, 2], [3, 4]]]
    img, lbl = write_idx_pair(tmp_path, images, [1, 0])
    ds = L.load_idx(str(img), str(lbl))
    assert ds.n == 2 and ds.d == 4
    assert ds.features[0, 2] == 1.0          # byte 255 scales to exactly 1.0
    assert ds.features[0, 1] == 128 / 255
    assert list(ds.labels) == [1, 0]


def test_load_idx_count_mismatch(tmp_path):
    img, _ = write_idx_pair(tmp_path, np.zeros((3, 2, 2)), [0, 1, 0], tag="a")
    _, lbl = write_idx_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1], tag="b")
    with pytest.raises(ValueError, match="count mismatch"):
        L.load_idx(str(img), str(lbl))


def test_load_idx_bad_magic(tmp_path):
    img, lbl = write_idx_pair(tmp_path, np.zeros((1, 2, 2)), [0])
    data = bytearray(open(img, "rb").read())
    data[3] = 0x99
    open(img, "wb").write(bytes(data))
    with pytest.raises(ValueError, match="magic"):
        L.load_idx(str(img), str(lbl))


def test_load_idx_truncated(tmp_path):
    img, lbl = write_idx_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1])
    data = open(img, "rb").read()
    open(img, "wb").write(data[:-3])
    with pytest.raises(ValueError, match="truncated"):
        L.load_idx(str(img), str(lbl))


# -- sharding ---------------------------------------------------------------------

def test_shard_full_fraction_is_permutation():
    ds = L.generate_synthetic(5, 40, 3, 2)
    sh = L.shard(ds, 1.0, 9)
    assert sh.n == ds.n
    assert sorted(map(tuple, sh.features)) == sorted(map(tuple, ds.features))


def test_shard_size_rounds_down():
    ds = L.generate_synthetic(5, 1000, 3, 2)
    assert L.shard(ds, 0.3, 1).n == 300


def test_shard_deterministic():
    ds = L.generate_synthetic(5, 60, 3, 2)
    a, b = L.shard(ds, 0.5, 4), L.shard(ds, 0.5, 4)
    assert np.array_equal(a.features, b.features)


def test_shard_empty_rejected():
    ds = L.generate_synthetic(5, 10, 3, 2)
    with pytest.raises(ValueError):
        L.shard(ds, 0.05, 1)


# -- gradients and SGD ----------------------------------------------------------------

def test_zero_steps_zero_delta():
    ds = L.generate_synthetic(1, 20, 3, 2)
    cfg = L.LearnerConfig()
    p = L.init_params(cfg, ds.d, ds.n_classes)
    upd = L.compute_gradient_steps(p, ds, cfg, 0)
    assert not upd.delta.any() and upd.steps == 0


def test_single_step_single_sample_matches_finite_differences():
    ds = L.Dataset([[0.5, -1.0, 2.0]], [1], 3)
    cfg = L.LearnerConfig(learning_rate=0.3, batch_size=1, seed=2)
    p = L.init_params(cfg, ds.d, ds.n_classes)
    upd = L.compute_gradient_steps(p, ds, cfg, 1)
    fd = finite_difference_gradient(p.values.copy(), ds.features, ds.labels,
                                    cfg, ds.n_classes)
    expected = -cfg.learning_rate * fd
    denom = np.maximum(np.abs(expected), 1e-12)
    assert np.max(np.abs(upd.delta - expected) / denom) < 1e-6


@pytest.mark.parametrize("arch,kwargs", [("softmax", {}), ("mlp", {"hidden_size": 5})])
def test_analytic_gradient_vs_central_differences(arch, kwargs):
    rng = np.random.default_rng(0)
    for trial in range(5):
        n, d, c = rng.integers(2, 6), rng.integers(1, 4), rng.integers(2, 4)
        x = rng.normal(0, 1, (n, d))
        y = rng.integers(0, c, n)
        cfg = L.LearnerConfig(model_arch=arch, seed=trial, **kwargs)
        vec = rng.normal(0, 0.5, L.model_dim(cfg, d, c))
        _, analytic = L.loss_and_gradient(vec.copy(), x, y, cfg, c)
        fd = finite_difference_gradient(vec.copy(), x, y, cfg, c)
        denom = np.maximum(np.abs(fd), 1e-8)
        assert np.max(np.abs(analytic - fd) / denom) < 1e-6


def test_sgd_deterministic_per_seed_and_round():
    ds = L.generate_synthetic(3, 50, 4, 3)
    cfg = L.LearnerConfig(seed=11)
    p = L.init_params(cfg, ds.d, ds.n_classes)
    a = L.compute_gradient_steps(p, ds, cfg, 5, round_id=2)
    b = L.compute_gradient_steps(p, ds, cfg, 5, round_id=2)
    c = L.compute_gradient_steps(p, ds, cfg, 5, round_id=3)
    assert np.array_equal(a.delta, b.delta)
    assert not np.array_equal(a.delta, c.delta)


def test_full_batch_loss_strictly_decreases_ten_steps():
    ds = L.generate_synthetic(7, 60, 5, 3)
    cfg = L.LearnerConfig(learning_rate=0.05, batch_size=ds.n)
    vec = L.init_params(cfg, ds.d, ds.n_classes).values.copy()
    losses = []
    for _ in range(11):
        loss, grad = L.loss_and_gradient(vec, ds.features, ds.labels, cfg, ds.n_classes)
        losses.append(loss)
        vec -= cfg.learning_rate * grad
    for before, after in zip(losses, losses[1:]):
        assert after < before


def test_dimension_mismatch_rejected():
    ds = L.generate_synthetic(1, 20, 3, 2)
    cfg = L.LearnerConfig()
    with pytest.raises(ValueError, match="dimension mismatch"):
        L.compute_gradient_steps(FlatParams(np.zeros(5)), ds, cfg, 1)
    with pytest.raises(ValueError, match="dimension mismatch"):
        L.evaluate(FlatParams(np.zeros(5)), ds, cfg)


# -- evaluation ------------------------------------------------------------------------

def test_evaluate_zero_weights_tie_breaks_to_class_zero():
    ds = L.generate_synthetic(2, 100, 4, 2)
    cfg = L.LearnerConfig()
    acc = L.evaluate(L.init_params(cfg, ds.d, ds.n_classes), ds, cfg)
    assert acc == 0.5  # balanced set, everything predicted class 0


def test_evaluate_perfect_fit_on_separable_set():
    ds = L.generate_synthetic(4, 80, 2, 2, center_spread=8.0, noise=0.3)
    cfg = L.LearnerConfig(learning_rate=0.5, batch_size=80)
    params = L.init_params(cfg, ds.d, ds.n_classes)
    for r in range(60):
        params = params + L.compute_gradient_steps(params, ds, cfg, 1, round_id=r).delta
    assert L.evaluate(params, ds, cfg) == 1.0


def test_dataset_rejects_empty():
    with pytest.raises(ValueError):
        L.Dataset(np.zeros((0, 3)), np.zeros(0, dtype=int), 2)


def test_steps_per_epoch():
    assert L.steps_per_epoch(360, 32) == 11
    assert L.steps_per_epoch(10, 32) == 1
