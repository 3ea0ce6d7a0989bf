"""Validated float64 arrays and the named parameter store."""
from __future__ import annotations

from collections.abc import Iterable, Mapping

import numpy as np


class DimensionError(ValueError):
    """Raised when array shapes do not line up."""


class NonFiniteError(ValueError):
    """Raised when a NaN or Inf reaches a place that requires finite values."""


def tensor(values, shape: Iterable[int] | None = None) -> np.ndarray:
    """Return `values` as a C-contiguous float64 array, rejecting NaN/Inf.

    If `shape` is given, ``prod(shape)`` must equal the number of values and
    the result is reshaped (row-major).
    """
    arr = np.array(values, dtype=np.float64, order="C", copy=True)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if int(np.prod(shape, dtype=np.int64)) != arr.size:
            raise DimensionError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("tensor values must be finite")
    return arr


def check_last_dim(x: np.ndarray, size: int, what: str = "input") -> None:
    if x.ndim == 0 or x.shape[-1] != size:
        raise DimensionError(f"{what} last dimension is {x.shape[-1:] or ()} but {size} is required")


class ParamStore(dict):
    """Ordered mapping of parameter name -> float64 array.

    Iteration order is insertion order, which every routine that flattens or
    reduces over parameters relies on.
    """

    def __setitem__(self, key, value):
        super().__setitem__(key, np.asarray(value, dtype=np.float64))

    def update(self, other=(), **kw):
        for k, v in dict(other, **kw).items():
            self[k] = v

    def add(self, name: str, value) -> None:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        self[name] = value

    def copy(self) -> "ParamStore":
        return ParamStore((k, v.copy()) for k, v in self.items())

    def zeros_like(self) -> "ParamStore":
        return ParamStore((k, np.zeros_like(v)) for k, v in self.items())

    def subset(self, prefix: str) -> "ParamStore":
        return ParamStore((k, v) for k, v in self.items() if k.startswith(prefix))

    @property
    def size(self) -> int:
        return sum(v.size for v in self.values())

    def flat(self) -> np.ndarray:
        if not self:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.values()])

    def with_flat(self, flat: np.ndarray) -> "ParamStore":
        """Copy of this store with values taken from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise DimensionError(f"flat vector has {flat.size} entries, store has {self.size}")
        out = ParamStore()
        i = 0
        for k, v in self.items():
            out[k] = flat[i:i + v.size].reshape(v.shape).copy()
            i += v.size
        return out

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(v * v)) for v in self.values())))

    def assert_same_layout(self, other: Mapping[str, np.ndarray]) -> None:
        if list(self) != list(other):
            raise DimensionError("parameter stores have different names or order")
        for k, v in self.items():
            if np.shape(other[k]) != v.shape:
                raise DimensionError(f"{k}: shape {np.shape(other[k])} != {v.shape}")
