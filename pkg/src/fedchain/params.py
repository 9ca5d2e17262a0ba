"""Flat parameter vectors: the common currency for models and gradients.

Models live on the wire and on the ledger as flat float64 arrays. Structured
(per-layer) weights are flattened in a fixed layer order and rebuilt from a
shape spec, so any gradient-descent-compatible model plugs in unchanged.

Canonical binary encoding, used for digests and ledger storage:

    header: dim as unsigned 64-bit little-endian
    body:   dim x 8-byte little-endian IEEE-754 doubles

Digests are computed over this encoding with a 256-bit hash (sha256 by
default, fixed per run).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

DEFAULT_HASH = "sha256"
DIGEST_SIZE = 32


def _as_readonly_f64(values, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise ValueError(f"{name} contains a non-finite entry at index {bad}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FlatParams:
    """Immutable flat vector of model weights."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_readonly_f64(self.values, "values"))
        if self.dim == 0:
            raise ValueError("dim must be positive (empty parameter vector rejected)")

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    def __add__(self, delta: np.ndarray) -> "FlatParams":
        return FlatParams(self.values + np.asarray(delta, dtype=np.float64))

    def __eq__(self, other) -> bool:
        if not isinstance(other, FlatParams):
            return NotImplemented
        return self.dim == other.dim and bool(np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class GradientUpdate:
    """One trainer's parameter delta against a released model version.

    ``delta`` is the cumulative difference (params after local SGD minus the
    round-base params); ``steps`` records how many minibatch steps it
    represents. Zero steps yields an all-zero delta and is legal.
    """

    trainer_id: int
    base_version: int
    delta: np.ndarray
    steps: int

    def __post_init__(self):
        object.__setattr__(self, "delta", _as_readonly_f64(self.delta, "delta"))
        if self.dim == 0:
            raise ValueError("dim must be positive")
        if self.trainer_id < 0:
            raise ValueError("trainer_id must be non-negative")
        if self.base_version < 0:
            raise ValueError("base_version must be non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")

    @property
    def dim(self) -> int:
        return int(self.delta.shape[0])


@dataclass(frozen=True)
class ModelVersion:
    """A released model: version counter, weights, and integrity digest."""

    version: int
    params: FlatParams
    digest: bytes = field(default=b"")

    def __post_init__(self):
        if self.version < 0:
            raise ValueError("version must be non-negative")
        expected = digest(self.params)
        if self.digest == b"":
            object.__setattr__(self, "digest", expected)
        elif self.digest != expected:
            raise ValueError("digest does not match params")


def flatten(structured_model) -> FlatParams:
    """Concatenate per-layer weight arrays into one flat vector.

    Layer order is the iteration order of ``structured_model``; within a
    layer, entries follow C (row-major) order. Rejects non-finite entries,
    naming the offending layer.
    """
    parts = []
    for i, layer in enumerate(structured_model):
        arr = np.asarray(layer, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"layer {i} contains a non-finite entry")
        parts.append(arr.reshape(-1))
    total = sum(p.size for p in parts)
    if total == 0:
        raise ValueError("dim must be positive (flattened model is empty)")
    return FlatParams(np.concatenate(parts) if parts else np.empty(0))


def rebuild(flat: FlatParams, shape_spec: list) -> list:
    """Split a flat vector back into per-layer arrays.

    ``shape_spec`` lists each layer's shape (ints for 1-D layers or shape
    tuples); the total size must equal ``flat.dim``. Inverse of
    :func:`flatten` bit-for-bit.
    """
    shapes = [tuple(np.atleast_1d(s)) if not isinstance(s, int) else (s,) for s in shape_spec]
    sizes = [int(np.prod(s)) for s in shapes]
    expected = sum(sizes)
    if expected != flat.dim:
        raise ValueError(f"shape mismatch: spec totals {expected} entries, params have {flat.dim}")
    layers = []
    offset = 0
    for shape, size in zip(shapes, sizes):
        layers.append(flat.values[offset:offset + size].reshape(shape).copy())
        offset += size
    return layers


def encode_params(params: FlatParams) -> bytes:
    """Canonical binary encoding (u64-LE dim header, f64-LE body)."""
    return struct.pack("<Q", params.dim) + params.values.astype("<f8").tobytes()


def decode_params(data: bytes) -> FlatParams:
    """Parse the canonical encoding produced by :func:`encode_params`."""
    if len(data) < 8:
        raise ValueError("truncated params encoding: missing header")
    (dim,) = struct.unpack_from("<Q", data)
    if len(data) != 8 + 8 * dim:
        raise ValueError(f"truncated params encoding: expected {8 + 8 * dim} bytes, got {len(data)}")
    values = np.frombuffer(data, dtype="<f8", count=dim, offset=8)
    return FlatParams(values)


def digest(params: FlatParams, algorithm: str = DEFAULT_HASH) -> bytes:
    """256-bit digest of the canonical encoding.

    Deterministic across processes and platforms; the algorithm is fixed per
    run (ledger files record it in their header).
    """
    h = hashlib.new(algorithm)
    h.update(encode_params(params))
    out = h.digest()
    if len(out) != DIGEST_SIZE:
        raise ValueError(f"hash {algorithm!r} is not 256-bit")
    return out


def digest_bytes(data: bytes, algorithm: str = DEFAULT_HASH) -> bytes:
    """Digest arbitrary canonical bytes with the run's fixed hash."""
    h = hashlib.new(algorithm)
    h.update(data)
    return h.digest()
