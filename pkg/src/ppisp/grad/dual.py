# src/ppisp/grad/dual.py
"""Forward-mode dual numbers over a small, fixed number of directions.

A Dual carries a value array and a tangent array of shape
(n_directions,) + value.shape. Only the operations the homography
construction needs are supported.
"""

from typing import Sequence

import numpy as np


def _lift_tangent(tangent: np.ndarray, value_ndim: int, out_ndim: int) -> np.ndarray:
    """Insert axes after the direction axis so the tangent broadcasts to out_ndim."""
    extra = out_ndim - value_ndim
    if extra <= 0:
        return tangent
    shape = (tangent.shape[0],) + (1,) * extra + tangent.shape[1:]
    return tangent.reshape(shape)


class Dual:
    """Value plus directional derivatives."""

    # Make numpy defer to the reflected operators below.
    __array_ufunc__ = None

    def __init__(self, value, tangent):
        self.value = np.asarray(value, dtype=np.float64)
        self.tangent = np.asarray(tangent, dtype=np.float64)
        if self.tangent.shape[1:] != self.value.shape:
            raise ValueError(
                f"tangent shape {self.tangent.shape} does not match value {self.value.shape}"
            )

    @property
    def n_directions(self) -> int:
        return self.tangent.shape[0]

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @classmethod
    def variables(cls, value) -> 'Dual':
        """Seed one direction per scalar entry of value."""
        value = np.asarray(value, dtype=np.float64)
        n = value.size
        return cls(value, np.eye(n).reshape((n,) + value.shape))

    @classmethod
    def constant(cls, value, n_directions: int) -> 'Dual':
        value = np.asarray(value, dtype=np.float64)
        return cls(value, np.zeros((n_directions,) + value.shape))

    def _coerce(self, other) -> 'Dual':
        if isinstance(other, Dual):
            return other
        return Dual.constant(other, self.n_directions)

    def stack(self, items: Sequence, axis: int = 0) -> 'Dual':
        duals = [self._coerce(i) for i in items]
        value = np.stack([d.value for d in duals], axis=axis)
        t_axis = axis + 1 if axis >= 0 else axis
        tangent = np.stack([d.tangent for d in duals], axis=t_axis)
        return Dual(value, tangent)

    def __getitem__(self, key) -> 'Dual':
        if not isinstance(key, tuple):
            key = (key,)
        return Dual(self.value[key], self.tangent[(slice(None),) + key])

    def __neg__(self) -> 'Dual':
        return Dual(-self.value, -self.tangent)

    def __add__(self, other) -> 'Dual':
        other = self._coerce(other)
        value = self.value + other.value
        nd = value.ndim
        tangent = (_lift_tangent(self.tangent, self.value.ndim, nd)
                   + _lift_tangent(other.tangent, other.value.ndim, nd))
        return Dual(value, np.broadcast_to(tangent, (self.n_directions,) + value.shape))

    __radd__ = __add__

    def __sub__(self, other) -> 'Dual':
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> 'Dual':
        return self._coerce(other) - self

    def __mul__(self, other) -> 'Dual':
        other = self._coerce(other)
        value = self.value * other.value
        nd = value.ndim
        tangent = (_lift_tangent(self.tangent, self.value.ndim, nd) * other.value
                   + self.value * _lift_tangent(other.tangent, other.value.ndim, nd))
        return Dual(value, np.broadcast_to(tangent, (self.n_directions,) + value.shape))

    __rmul__ = __mul__

    def __truediv__(self, other) -> 'Dual':
        other = self._coerce(other)
        value = self.value / other.value
        nd = value.ndim
        tangent = (_lift_tangent(self.tangent, self.value.ndim, nd) * other.value
                   - self.value * _lift_tangent(other.tangent, other.value.ndim, nd))
        tangent = tangent / (other.value * other.value)
        return Dual(value, np.broadcast_to(tangent, (self.n_directions,) + value.shape))

    def __matmul__(self, other) -> 'Dual':
        other = self._coerce(other)
        value = self.value @ other.value
        tangent = self.tangent @ other.value + self.value @ other.tangent
        return Dual(value, tangent)

    def __rmatmul__(self, other) -> 'Dual':
        return self._coerce(other) @ self

    def __repr__(self) -> str:
        return f"Dual(value={self.value!r}, n_directions={self.n_directions})"
