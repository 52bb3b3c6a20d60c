# src/ppisp/calib/losses.py
"""Photometric loss and parameter regularizers.

The regularizers pin down the degrees of freedom the images alone cannot
resolve:

- exposure: mean exposure offset over a sensor's frames -> 0
- color: frame-mean chromaticity offset of each control point -> 0
- variance: across-channel spread of vignetting and CRF parameters
- vignetting: optical center near the image center, falloff non-increasing

Every regularizer comes with its gradient so the calibration loop can add
it to the photometric adjoints.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ppisp.core.image import ImageLike, as_array
from ppisp.errors import ShapeMismatchError
from ppisp.isp.params import FrameParams, SensorParams
from ppisp.isp.precondition import PreconditionBlocks, default_blocks

EXPOSURE_HUBER_DELTA = 0.1
COLOR_HUBER_DELTA = 0.005


@dataclass(frozen=True)
class RegWeights:
    """Regularizer weights."""

    lambda_b: float = 1.0       # Mean exposure offset
    lambda_c: float = 1.0       # Mean chromaticity offsets
    lambda_var: float = 0.1     # Across-channel variance
    lambda_v: float = 0.01      # Vignetting center and positive coefficients

    def __post_init__(self):
        for name in ('lambda_b', 'lambda_c', 'lambda_var', 'lambda_v'):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class RegBreakdown:
    """Weighted regularizer terms."""

    exposure: float = 0.0
    color: float = 0.0
    variance: float = 0.0
    vignetting: float = 0.0

    @property
    def total(self) -> float:
        return self.exposure + self.color + self.variance + self.vignetting

    def __add__(self, other: 'RegBreakdown') -> 'RegBreakdown':
        return RegBreakdown(
            exposure=self.exposure + other.exposure,
            color=self.color + other.color,
            variance=self.variance + other.variance,
            vignetting=self.vignetting + other.vignetting,
        )


def huber(x, delta: float) -> float:
    """Sum over components of 0.5 x^2 (|x| <= delta) or delta (|x| - delta / 2)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.abs(np.asarray(x, dtype=np.float64))
    return float(np.sum(np.where(x <= delta, 0.5 * x * x, delta * (x - 0.5 * delta))))


def huber_grad(x, delta: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.clip(x, -delta, delta)


def photometric_loss(pred: ImageLike, target: ImageLike) -> Tuple[float, np.ndarray]:
    """
    Mean squared error over all values.

    Returns:
        (loss, gradient w.r.t. pred)

    Raises:
        ShapeMismatchError: pred and target differ in shape
    """
    p = as_array(pred)
    t = as_array(target)
    if p.shape != t.shape:
        raise ShapeMismatchError(f"prediction {p.shape} and target {t.shape} differ in shape")
    diff = p - t
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def _channel_variance(values: np.ndarray) -> Tuple[float, np.ndarray]:
    """Population variance across channels (axis 0), averaged over slots, and its gradient."""
    channels, slots = values.shape
    centered = values - values.mean(axis=0)
    var = float(np.mean(np.mean(centered * centered, axis=0)))
    return var, 2.0 * centered / (channels * slots)


def reg_terms(frames: Sequence[FrameParams], sensor: SensorParams,
              weights: Optional[RegWeights] = None,
              blocks: Optional[PreconditionBlocks] = None) -> RegBreakdown:
    """Regularizer terms for one sensor and the frames it captured."""
    breakdown, _, _ = _regularize(frames, sensor, weights or RegWeights(), blocks)
    return breakdown


def reg_total(frames: Sequence[FrameParams], sensor: SensorParams,
              weights: Optional[RegWeights] = None,
              blocks: Optional[PreconditionBlocks] = None) -> float:
    """Sum of the weighted regularizers for one sensor."""
    return reg_terms(frames, sensor, weights, blocks).total


def reg_gradients(frames: Sequence[FrameParams], sensor: SensorParams,
                  weights: Optional[RegWeights] = None,
                  blocks: Optional[PreconditionBlocks] = None
                  ) -> Tuple[RegBreakdown, Dict[str, np.ndarray], List[Dict[str, np.ndarray]]]:
    """
    Regularizer terms with gradients.

    Returns:
        (terms, gradient w.r.t. sensor.to_arrays(), one gradient dict per
        frame laid out like FrameParams.to_arrays())
    """
    return _regularize(frames, sensor, weights or RegWeights(), blocks)


def _regularize(frames: Sequence[FrameParams], sensor: SensorParams, weights: RegWeights,
                blocks: Optional[PreconditionBlocks]):
    if not frames:
        raise ValueError("regularizers need at least one frame")
    blocks = blocks or default_blocks()
    n_frames = len(frames)
    terms = RegBreakdown()

    # Exposure: mean offset over frames.
    mean_dt = float(np.mean([f.delta_t for f in frames]))
    terms.exposure = weights.lambda_b * huber(mean_dt, EXPOSURE_HUBER_DELTA)
    g_dt = weights.lambda_b * float(huber_grad(mean_dt, EXPOSURE_HUBER_DELTA)) / n_frames

    # Color: frame-mean offset per control point.
    offsets = np.stack([f.color_offsets(blocks) for f in frames])
    mean_offsets = offsets.mean(axis=0)
    terms.color = weights.lambda_c * huber(mean_offsets, COLOR_HUBER_DELTA)
    g_offsets = weights.lambda_c * huber_grad(mean_offsets, COLOR_HUBER_DELTA) / n_frames
    g_theta = blocks.pullback(g_offsets)

    # Variance: vignetting alpha (3 slots) and materialized CRF (4 slots).
    var_vig, g_alpha_var = _channel_variance(sensor.vignetting.alpha)
    var_crf, g_crf_var = _channel_variance(sensor.crf.materialized())
    terms.variance = weights.lambda_var * (var_vig + var_crf)

    # Vignetting: centered optical axis, no brightening with radius.
    mu = sensor.vignetting.mu
    positive = np.maximum(sensor.vignetting.alpha, 0.0)
    terms.vignetting = weights.lambda_v * float(np.sum(mu * mu) + np.sum(positive * positive))

    sensor_grads = {
        'vig_mu': 2.0 * weights.lambda_v * mu,
        'vig_alpha': weights.lambda_var * g_alpha_var + 2.0 * weights.lambda_v * positive,
        'crf_raw': weights.lambda_var * g_crf_var * sensor.crf.materialization_jacobian(),
    }
    frame_grads = [{'delta_t': np.array(g_dt), 'theta': g_theta.copy()} for _ in frames]
    return terms, sensor_grads, frame_grads
