"""Dense tanh network: parameters, Xavier initialization, min-max input scaling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_MAGIC = b"BCPW"
CHECKPOINT_VERSION = 1


class ConfigurationError(ValueError):
    """Raised for invalid network or run configuration."""


class CheckpointError(ValueError):
    pass


def parameter_count(layer_dims: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


@dataclass(frozen=True)
class DomainBox:
    x_min: float = -1.0
    x_max: float = 1.0
    t_min: float = 0.0
    t_max: float = 1.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.t_min < self.t_max):
            raise ConfigurationError(f"degenerate domain box {self}")

    @property
    def x_scale(self) -> float:
        """d(x_normalized)/dx, the factor applied once per spatial derivative order."""
        return 1.0 / (self.x_max - self.x_min)

    @property
    def t_scale(self) -> float:
        return 1.0 / (self.t_max - self.t_min)


def normalize(points, box: DomainBox) -> np.ndarray:
    """Affine min-max map of physical (x, t) rows onto [0, 1]^2 (no clamping)."""
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] - box.x_min) * box.x_scale
    out[..., 1] = (pts[..., 1] - box.t_min) * box.t_scale
    return out


class MlpParameters:
    """Weights and biases of a dense network, backed by one flat float64 vector.

    Weight matrices are stored with shape ``(fan_in, fan_out)`` so a layer is
    ``x @ W + b``. The canonical flattening is ``W0, b0, W1, b1, ...`` with each
    matrix row-major; gradient vectors use the same layout.
    """

    def __init__(self, layer_dims: Sequence[int], flat: np.ndarray | None = None):
        dims = tuple(int(d) for d in layer_dims)
        if len(dims) < 3 or any(d <= 0 for d in dims):
            raise ConfigurationError(f"layer_dims must have >=3 positive entries, got {list(layer_dims)}")
        self.layer_dims = dims
        n = parameter_count(dims)
        if flat is None:
            flat = np.zeros(n)
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (n,):
            raise ConfigurationError(f"expected {n} parameters, got shape {flat.shape}")
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        off = 0
        for a, b in zip(dims[:-1], dims[1:]):
            self.weights.append(flat[off:off + a * b].reshape(a, b))
            off += a * b
            self.biases.append(flat[off:off + b])
            off += b

    @property
    def size(self) -> int:
        return self.flat.size

    @property
    def output_width(self) -> int:
        return self.layer_dims[-1]

    def with_flat(self, flat: np.ndarray) -> "MlpParameters":
        return MlpParameters(self.layer_dims, np.array(flat, dtype=np.float64, copy=True))

    def copy(self) -> "MlpParameters":
        return self.with_flat(self.flat)

    def __repr__(self):
        return f"MlpParameters(layer_dims={list(self.layer_dims)}, size={self.size})"


def xavier_init(layer_dims: Sequence[int], seed: int) -> MlpParameters:
    """Normal Xavier weights (variance 2/(fan_in+fan_out)) and zero biases."""
    params = MlpParameters(layer_dims)
    rng = np.random.default_rng(int(seed) & 0xFFFF_FFFF_FFFF_FFFF)
    for W in params.weights:
        fan_in, fan_out = W.shape
        W[...] = rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)), size=W.shape)
    return params


def forward(params: MlpParameters, xt_normalized) -> np.ndarray:
    """Evaluate the network on normalized (N, 2) inputs; returns (N, output_width)."""
    a = np.asarray(xt_normalized, dtype=np.float64)
    n_layers = len(params.weights)
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ W + b
        if i < n_layers - 1:
            a = np.tanh(a)
    return a


def save_checkpoint(params: MlpParameters, path) -> None:
    dims = params.layer_dims
    header = CHECKPOINT_MAGIC + struct.pack(f"<II{len(dims)}I", CHECKPOINT_VERSION, len(dims), *dims)
    Path(path).write_bytes(header + params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> MlpParameters:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a network checkpoint")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12 + 4 * n
    if len(raw) < off:
        raise CheckpointError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{n}I", raw, 12)
    expected = parameter_count(dims)
    body = raw[off:]
    if len(body) != 8 * expected:
        raise CheckpointError(f"{path}: expected {expected} parameters, found {len(body) / 8:g}")
    return MlpParameters(dims, np.frombuffer(body, dtype="<f8").astype(np.float64))
