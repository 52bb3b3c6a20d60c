# src/ppisp/isp/params.py
"""Parameter containers for the ISP pipeline.

SensorParams hold per-camera calibration (chromatic vignetting and
per-channel CRF); FrameParams hold per-capture settings (exposure offset
and the preconditioned chromaticity offsets). Containers are immutable
values; optimizers work on the dicts returned by ``to_arrays``.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ppisp.errors import ShapeMismatchError
from ppisp.isp.precondition import PreconditionBlocks, default_blocks

CHANNELS = ('r', 'g', 'b')
CONTROL_POINTS = ('r', 'g', 'b', 'w')
CRF_FIELDS = ('tau', 'eta', 'xi', 'gamma')


def _frozen(value, shape: tuple, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, copy=True)
    if arr.shape != shape:
        raise ShapeMismatchError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite values")
    arr.setflags(write=False)
    return arr


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True, eq=False)
class VignettingParams:
    """Per-channel optical-center offset and falloff polynomial.

    mu[k] is the (x, y) offset of channel k's optical center from the
    geometric image center, in normalized units; alpha[k] = (a1, a2, a3).
    """

    mu: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'mu', _frozen(self.mu, (3, 2), 'mu'))
        object.__setattr__(self, 'alpha', _frozen(self.alpha, (3, 3), 'alpha'))

    @classmethod
    def identity(cls) -> 'VignettingParams':
        return cls(mu=np.zeros((3, 2)), alpha=np.zeros((3, 3)))


@dataclass(frozen=True, eq=False)
class CrfParams:
    """Per-channel CRF in unconstrained coordinates.

    raw[k] = (p_tau, p_eta, p_xi, p_gamma) with tau = exp(p_tau),
    eta = exp(p_eta), xi = sigmoid(p_xi), gamma = exp(p_gamma).
    """

    raw: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'raw', _frozen(self.raw, (3, 4), 'crf raw'))

    @classmethod
    def identity(cls) -> 'CrfParams':
        return cls(raw=np.zeros((3, 4)))

    @classmethod
    def from_materialized(cls, tau, eta, xi, gamma) -> 'CrfParams':
        """Build from constrained values (scalars or per-channel triples)."""
        tau, eta, xi, gamma = (np.broadcast_to(np.asarray(v, dtype=np.float64), (3,))
                               for v in (tau, eta, xi, gamma))
        if np.any(tau <= 0) or np.any(eta <= 0) or np.any(gamma <= 0):
            raise ValueError("tau, eta and gamma must be positive")
        if np.any(xi <= 0) or np.any(xi >= 1):
            raise ValueError("xi must lie in (0, 1)")
        raw = np.stack([np.log(tau), np.log(eta), logit(xi), np.log(gamma)], axis=1)
        return cls(raw=raw)

    @property
    def tau(self) -> np.ndarray:
        return np.exp(self.raw[:, 0])

    @property
    def eta(self) -> np.ndarray:
        return np.exp(self.raw[:, 1])

    @property
    def xi(self) -> np.ndarray:
        return sigmoid(self.raw[:, 2])

    @property
    def gamma(self) -> np.ndarray:
        return np.exp(self.raw[:, 3])

    def materialized(self) -> np.ndarray:
        """3 x 4 array of (tau, eta, xi, gamma) per channel."""
        return np.stack([self.tau, self.eta, self.xi, self.gamma], axis=1)

    def materialization_jacobian(self) -> np.ndarray:
        """Elementwise d(materialized)/d(raw), shape 3 x 4."""
        xi = self.xi
        return np.stack([self.tau, self.eta, xi * (1.0 - xi), self.gamma], axis=1)


@dataclass(frozen=True, eq=False)
class SensorParams:
    """Per-camera calibration."""

    vignetting: VignettingParams
    crf: CrfParams

    @classmethod
    def identity(cls) -> 'SensorParams':
        return cls(vignetting=VignettingParams.identity(), crf=CrfParams.identity())

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {
            'vig_mu': np.array(self.vignetting.mu),
            'vig_alpha': np.array(self.vignetting.alpha),
            'crf_raw': np.array(self.crf.raw),
        }

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> 'SensorParams':
        return cls(
            vignetting=VignettingParams(mu=arrays['vig_mu'], alpha=arrays['vig_alpha']),
            crf=CrfParams(raw=arrays['crf_raw']),
        )

    def replace(self, vignetting: Optional[VignettingParams] = None,
                crf: Optional[CrfParams] = None) -> 'SensorParams':
        return SensorParams(vignetting=vignetting or self.vignetting, crf=crf or self.crf)


@dataclass(frozen=True, eq=False)
class FrameParams:
    """Per-capture exposure offset (stops) and color offsets.

    theta[k] holds control point k's chromaticity offset in preconditioned
    coordinates; the offset itself is P_k @ theta[k].
    """

    delta_t: float
    theta: np.ndarray

    def __post_init__(self):
        delta_t = float(self.delta_t)
        if not np.isfinite(delta_t):
            raise ValueError("delta_t must be finite")
        object.__setattr__(self, 'delta_t', delta_t)
        object.__setattr__(self, 'theta', _frozen(self.theta, (4, 2), 'theta'))

    @classmethod
    def identity(cls) -> 'FrameParams':
        return cls(delta_t=0.0, theta=np.zeros((4, 2)))

    @classmethod
    def from_offsets(cls, delta_t: float, offsets,
                     blocks: Optional[PreconditionBlocks] = None) -> 'FrameParams':
        """Build from materialized chromaticity offsets (4 x 2, order R, G, B, W)."""
        blocks = blocks or default_blocks()
        return cls(delta_t=delta_t, theta=blocks.to_theta(offsets))

    def color_offsets(self, blocks: Optional[PreconditionBlocks] = None) -> np.ndarray:
        """Materialized offsets Δc, shape 4 x 2."""
        blocks = blocks or default_blocks()
        return blocks.materialize(self.theta)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        return {'delta_t': np.array(self.delta_t), 'theta': np.array(self.theta)}

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> 'FrameParams':
        return cls(delta_t=float(arrays['delta_t']), theta=arrays['theta'])

    def replace(self, delta_t: Optional[float] = None,
                theta: Optional[np.ndarray] = None) -> 'FrameParams':
        return FrameParams(
            delta_t=self.delta_t if delta_t is None else delta_t,
            theta=self.theta if theta is None else theta,
        )
