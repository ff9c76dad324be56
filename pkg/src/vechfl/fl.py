"""Federated-learning arithmetic on synthetic linear-regression tasks.

Vehicles run mini-batch SGD from the edge model they received, edge servers
take the data-weighted mean of their vehicles' models, and the cloud blends
the previous global model with the data-weighted mean of the quorum's edge
models.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._rng import stream


class NonFiniteGradient(FloatingPointError):
    pass


class EmptyAggregation(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class QuorumMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ModelVector:
    params: np.ndarray
    data_weight: float = 1.0

    def __post_init__(self):
        p = np.array(self.params, dtype=np.float64).reshape(-1)
        p.setflags(write=False)
        object.__setattr__(self, "params", p)
        object.__setattr__(self, "data_weight", float(self.data_weight))

    @property
    def dim(self) -> int:
        return self.params.shape[0]

    def with_weight(self, w: float) -> "ModelVector":
        return ModelVector(self.params, w)

    def to_bytes(self) -> bytes:
        """Little-endian: uint64 dim, float64 data_weight, dim float64 params."""
        return struct.pack("<Qd", self.dim, self.data_weight) + self.params.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ModelVector":
        dim, w = struct.unpack_from("<Qd", blob, 0)
        body = blob[16:]
        if len(body) != 8 * dim:
            raise ValueError(f"expected {8 * dim} parameter bytes, got {len(body)}")
        return cls(np.frombuffer(body, dtype="<f8").astype(np.float64), w)


@dataclass
class SyntheticTask:
    """Noisy linear regression ``y = X w_true + noise`` with MSE loss."""

    task_id: int
    model_dim: int
    noise_scale: float
    seed: int
    w_true: np.ndarray = field(init=False)
    _data: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.w_true = stream(self.seed, "truth", self.task_id).standard_normal(self.model_dim)

    def dataset(self, n: int, size: int) -> tuple[np.ndarray, np.ndarray]:
        """Samples held by vehicle ``n`` (IID across vehicles)."""
        key = (n, size)
        d = self._data.get(key)
        if d is None:
            rng = stream(self.seed, "data", self.task_id, n)
            X = rng.standard_normal((size, self.model_dim))
            y = X @ self.w_true + self.noise_scale * rng.standard_normal(size)
            d = (X, y)
            self._data[key] = d
        return d

    @staticmethod
    def loss(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
        r = X @ w - y
        return float(r @ r / len(y))

    @staticmethod
    def grad(w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        return 2.0 / len(y) * (X.T @ (X @ w - y))

    def distance(self, model: ModelVector) -> float:
        return float(np.linalg.norm(model.params - self.w_true))


def local_sgd(model: ModelVector, X: np.ndarray, y: np.ndarray, H: int, lr: float, batch: int,
              rng: np.random.Generator) -> ModelVector:
    """``H`` mini-batch steps; batches are drawn without replacement from a
    reshuffled permutation of the local data, reshuffling on exhaustion."""
    size = len(y)
    if batch > size:
        raise ValueError(f"batch {batch} exceeds dataset size {size}")
    w = np.array(model.params, dtype=np.float64)
    perm = rng.permutation(size)
    pos = 0
    for _ in range(H):
        if pos + batch > size:
            perm = rng.permutation(size)
            pos = 0
        idx = perm[pos:pos + batch]
        pos += batch
        with np.errstate(over="ignore", invalid="ignore"):
            g = SyntheticTask.grad(w, X[idx], y[idx])
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient has non-finite entries")
        w = w - lr * g
    return ModelVector(w, size)


def _check_dims(models: Sequence[ModelVector]) -> int:
    dims = {m.dim for m in models}
    if len(dims) != 1:
        raise DimMismatch(f"model dimensions differ: {sorted(dims)}")
    return dims.pop()


def aggregation_weights(models: Sequence[ModelVector]) -> np.ndarray:
    w = np.array([m.data_weight for m in models], dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("aggregation participants need positive data weight")
    return w / w.sum()


def edge_aggregate(models: Sequence[ModelVector]) -> ModelVector:
    """Data-weighted mean; the result carries the summed data weight."""
    if not models:
        raise EmptyAggregation("no models to aggregate")
    _check_dims(models)
    w = aggregation_weights(models)
    params = w @ np.stack([m.params for m in models])
    return ModelVector(params, sum(m.data_weight for m in models))


def global_aggregate(prev_global: ModelVector, edge_models: Sequence[ModelVector], alpha: float,
                     quorum: Optional[int] = None) -> ModelVector:
    """``alpha * prev + (1 - alpha) * data-weighted mean of edge models``."""
    if not edge_models:
        raise EmptyAggregation("no edge models to aggregate")
    if quorum is not None and len(edge_models) != quorum:
        raise QuorumMismatch(f"expected {quorum} edge models, got {len(edge_models)}")
    _check_dims(list(edge_models) + [prev_global])
    mixed = edge_aggregate(edge_models)
    if alpha == 1.0:
        params = prev_global.params
    elif alpha == 0.0:
        params = mixed.params
    else:
        params = alpha * prev_global.params + (1.0 - alpha) * mixed.params
    return ModelVector(params, mixed.data_weight)


def check_convergence(curr: ModelVector, prev: ModelVector, beta: float) -> bool:
    if curr.dim != prev.dim:
        raise DimMismatch(f"{curr.dim} != {prev.dim}")
    return bool(np.linalg.norm(curr.params - prev.params) <= beta)
