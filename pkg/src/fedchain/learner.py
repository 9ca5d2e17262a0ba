"""Pluggable training side: datasets, built-in classifiers, SGD, accuracy.

Two dependency-free differentiable models are built in, selected by
``LearnerConfig.model_arch``:

* ``softmax``: multinomial logistic regression. Flat layout is
  ``[W (d x C, row-major), b (C)]``, dim = d*C + C.
* ``mlp``: one tanh hidden layer. Flat layout is
  ``[W1 (d x h), b1 (h), W2 (h x C), b2 (C)]``.

Loss is softmax cross-entropy with optional L2. Everything is a pure
function of (inputs, seed, round counter) so concurrent evaluation and
replay are safe.
"""

from __future__ import annotations

from dataclasses import dataclass
import struct

import numpy as np

from .params import FlatParams, GradientUpdate

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus integer class labels."""

    features: np.ndarray  # n x d, float64
    labels: np.ndarray    # n, ints in [0, n_classes)
    n_classes: int

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if feats.shape[0] < 1:
            raise ValueError("dataset must contain at least one sample")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels length must match feature rows")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite entries")
        if self.n_classes < 2:
            raise ValueError("n_classes must be at least 2")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        feats.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])


@dataclass(frozen=True)
class LearnerConfig:
    model_arch: str = "softmax"      # "softmax" or "mlp"
    hidden_size: int = 16            # mlp only
    learning_rate: float = 0.1
    batch_size: int = 32
    seed: int = 0
    l2: float = 0.0
    init_scale: float = 0.0          # 0: canonical zero start (softmax only)

    def __post_init__(self):
        if self.model_arch not in ("softmax", "mlp"):
            raise ValueError(f"unknown model_arch {self.model_arch!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.model_arch == "mlp" and self.hidden_size < 1:
            raise ValueError("hidden_size must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")


def model_dim(config: LearnerConfig, d: int, n_classes: int) -> int:
    """Flat dimensionality of the configured architecture."""
    if config.model_arch == "softmax":
        return d * n_classes + n_classes
    h = config.hidden_size
    return d * h + h + h * n_classes + n_classes


def init_params(config: LearnerConfig, d: int, n_classes: int) -> FlatParams:
    """Initial weights: zeros for softmax, seeded small Gaussians for mlp.

    Softmax cross-entropy is convex so the zero start is canonical and
    reproducible; the MLP needs symmetry breaking. A positive init_scale
    replaces the zero start with seeded N(0, init_scale) weights, which
    makes early accuracy reflect optimization progress instead of jumping
    straight to the class-mean discriminant.
    """
    dim = model_dim(config, d, n_classes)
    if config.model_arch == "softmax":
        if config.init_scale == 0.0:
            return FlatParams(np.zeros(dim))
        rng = np.random.default_rng(config.seed)
        return FlatParams(rng.normal(0.0, config.init_scale, dim))
    rng = np.random.default_rng(config.seed)
    return FlatParams(rng.normal(0.0, max(config.init_scale, 0.1), dim))


def _unpack_softmax(vec: np.ndarray, d: int, c: int):
    w = vec[: d * c].reshape(d, c)
    b = vec[d * c : d * c + c]
    return w, b


def _unpack_mlp(vec: np.ndarray, d: int, h: int, c: int):
    o = 0
    w1 = vec[o : o + d * h].reshape(d, h); o += d * h
    b1 = vec[o : o + h]; o += h
    w2 = vec[o : o + h * c].reshape(h, c); o += h * c
    b2 = vec[o : o + c]
    return w1, b1, w2, b2


def _logits(vec: np.ndarray, x: np.ndarray, config: LearnerConfig, c: int) -> np.ndarray:
    d = x.shape[1]
    if config.model_arch == "softmax":
        w, b = _unpack_softmax(vec, d, c)
        return x @ w + b
    w1, b1, w2, b2 = _unpack_mlp(vec, d, config.hidden_size, c)
    return np.tanh(x @ w1 + b1) @ w2 + b2


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_gradient(vec: np.ndarray, x: np.ndarray, y: np.ndarray,
                      config: LearnerConfig, c: int):
    """Mean cross-entropy over the batch and its gradient w.r.t. the flat vector."""
    m, d = x.shape
    if config.model_arch == "softmax":
        w, b = _unpack_softmax(vec, d, c)
        probs = _softmax(x @ w + b)
        loss = -np.log(probs[np.arange(m), y] + 1e-300).mean()
        g = probs
        g[np.arange(m), y] -= 1.0
        g /= m
        gw = x.T @ g
        gb = g.sum(axis=0)
        if config.l2 > 0:
            loss += 0.5 * config.l2 * float(w.ravel() @ w.ravel())
            gw += config.l2 * w
        return loss, np.concatenate([gw.reshape(-1), gb])
    h = config.hidden_size
    w1, b1, w2, b2 = _unpack_mlp(vec, d, h, c)
    a = np.tanh(x @ w1 + b1)
    probs = _softmax(a @ w2 + b2)
    loss = -np.log(probs[np.arange(m), y] + 1e-300).mean()
    g = probs
    g[np.arange(m), y] -= 1.0
    g /= m
    gw2 = a.T @ g
    gb2 = g.sum(axis=0)
    da = g @ w2.T * (1.0 - a * a)
    gw1 = x.T @ da
    gb1 = da.sum(axis=0)
    if config.l2 > 0:
        loss += 0.5 * config.l2 * (float(w1.ravel() @ w1.ravel()) + float(w2.ravel() @ w2.ravel()))
        gw1 += config.l2 * w1
        gw2 += config.l2 * w2
    return loss, np.concatenate([gw1.reshape(-1), gb1, gw2.reshape(-1), gb2])


def generate_synthetic(seed: int, n: int, d: int, n_classes: int,
                       center_spread: float = 2.0, noise: float = 1.0,
                       informative_dims: int = None) -> Dataset:
    """Gaussian-cluster classification set, reproducible bit-for-bit per seed.

    Class counts are balanced within +/-1 of n / n_classes; rows are shuffled
    so contiguous shards mix classes. Centers sit at the corners of a scaled
    orthogonal simplex inside a seed-rotated ``informative_dims``-dimensional
    subspace, so every seed draws a problem of identical difficulty (all
    pairwise center distances equal center_spread * sqrt(2)); the remaining
    coordinates carry pure noise, which keeps the fitted weights genuinely
    sample-limited.
    """
    if n_classes < 2 or n < n_classes or d < 1:
        raise ValueError("need n >= n_classes >= 2 and d >= 1")
    m = d if informative_dims is None else informative_dims
    if not 1 <= m <= d:
        raise ValueError("informative_dims must lie in [1, d]")
    rng = np.random.default_rng(seed)
    base_dim = max(m, n_classes)
    corners = np.zeros((n_classes, base_dim))
    corners[np.arange(n_classes), np.arange(n_classes) % base_dim] = center_spread
    # Haar-ish rotation of the informative subspace: distances are preserved,
    # the embedding direction is seed-dependent.
    q, _ = np.linalg.qr(rng.normal(0.0, 1.0, (base_dim, base_dim)))
    centers = np.zeros((n_classes, d))
    span = min(base_dim, d)
    centers[:, :span] = (corners @ q)[:, :span]
    base, extra = divmod(n, n_classes)
    counts = [base + (1 if i < extra else 0) for i in range(n_classes)]
    labels = np.repeat(np.arange(n_classes), counts)
    feats = centers[labels] + rng.normal(0.0, noise, (n, d))
    perm = rng.permutation(n)
    return Dataset(feats[perm], labels[perm], n_classes)


def _read_idx_header(data: bytes, path: str, expect_magic: int, n_dims: int):
    need = 4 * (1 + n_dims)
    if len(data) < need:
        raise ValueError(f"truncated IDX file {path}: header needs {need} bytes, got {len(data)}")
    magic = struct.unpack_from(">I", data, 0)[0]
    if magic != expect_magic:
        raise ValueError(f"bad IDX magic in {path}: expected {expect_magic:#010x}, got {magic:#010x}")
    dims = struct.unpack_from(f">{n_dims}I", data, 4)
    return dims, need


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an MNIST-style IDX image/label pair, pixels scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        img_data = f.read()
    with open(labels_path, "rb") as f:
        lbl_data = f.read()

    (n_img, rows, cols), img_off = _read_idx_header(img_data, images_path, IDX_IMAGE_MAGIC, 3)
    (n_lbl,), lbl_off = _read_idx_header(lbl_data, labels_path, IDX_LABEL_MAGIC, 1)

    if len(img_data) - img_off != n_img * rows * cols:
        raise ValueError(f"truncated IDX file {images_path}: "
                         f"expected {n_img * rows * cols} pixel bytes, got {len(img_data) - img_off}")
    if len(lbl_data) - lbl_off != n_lbl:
        raise ValueError(f"truncated IDX file {labels_path}: "
                         f"expected {n_lbl} label bytes, got {len(lbl_data) - lbl_off}")
    if n_img != n_lbl:
        raise ValueError(f"IDX count mismatch: {n_img} images vs {n_lbl} labels")

    pixels = np.frombuffer(img_data, dtype=np.uint8, offset=img_off)
    feats = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lbl_data, dtype=np.uint8, offset=lbl_off).astype(np.int64)
    return Dataset(feats, labels, int(labels.max()) + 1 if labels.size else 10)


def shard(dataset: Dataset, fraction: float, seed: int) -> Dataset:
    """Deterministic sample without replacement of size floor(fraction * n)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    size = int(fraction * dataset.n)
    if size < 1:
        raise ValueError(f"shard would be empty: fraction {fraction} of {dataset.n} samples")
    idx = np.random.default_rng(seed).permutation(dataset.n)[:size]
    return Dataset(dataset.features[idx], dataset.labels[idx], dataset.n_classes)


def _check_dim(params: FlatParams, dataset: Dataset, config: LearnerConfig):
    expect = model_dim(config, dataset.d, dataset.n_classes)
    if params.dim != expect:
        raise ValueError(f"dimension mismatch: params have {params.dim}, "
                         f"{config.model_arch} on (d={dataset.d}, C={dataset.n_classes}) needs {expect}")


def compute_gradient_steps(params: FlatParams, dataset: Dataset, config: LearnerConfig,
                           k: int, round_id: int = 0, segment: int = 0,
                           trainer_id: int = 0, base_version: int = 0) -> GradientUpdate:
    """Run k minibatch SGD steps and return the cumulative delta.

    Minibatches are drawn shuffle-once-per-epoch from a generator reseeded
    per (config.seed, round_id, segment), so identical calls yield identical
    deltas on every replica. ``segment`` distinguishes successive jobs within
    one round (barrierless resubmission).
    """
    _check_dim(params, dataset, config)
    if k < 0:
        raise ValueError("step count must be non-negative")
    vec = params.values.copy()
    rng = np.random.default_rng([config.seed, round_id, segment])
    bs = min(config.batch_size, dataset.n)
    order = rng.permutation(dataset.n)
    pos = 0
    for _ in range(k):
        if pos + bs > dataset.n:
            order = rng.permutation(dataset.n)
            pos = 0
        batch = order[pos:pos + bs]
        pos += bs
        _, grad = loss_and_gradient(vec, dataset.features[batch], dataset.labels[batch],
                                    config, dataset.n_classes)
        vec -= config.learning_rate * grad
    return GradientUpdate(trainer_id=trainer_id, base_version=base_version,
                          delta=vec - params.values, steps=k)


def steps_per_epoch(dataset_size: int, batch_size: int) -> int:
    """Number of minibatch steps that constitute one local epoch."""
    bs = min(batch_size, dataset_size)
    return max(1, dataset_size // bs)


def evaluate(params: FlatParams, dataset: Dataset, config: LearnerConfig) -> float:
    """Fraction of argmax-correct predictions; ties go to the lowest class index."""
    _check_dim(params, dataset, config)
    logits = _logits(params.values, dataset.features, config, dataset.n_classes)
    pred = np.argmax(logits, axis=1)  # argmax takes the first (lowest) index on ties
    return float(np.mean(pred == dataset.labels))
