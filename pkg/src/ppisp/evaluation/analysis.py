# src/ppisp/evaluation/analysis.py
"""Recovered-parameter analysis against a known ground truth.

Exposure offsets are only identifiable up to an affine map in the log
domain (a CRF and an exposure sharing a power transform look the same),
so recovered offsets are compared after the best affine fit. CRFs are
compared after removing the global offset found by that fit.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ppisp.errors import ShapeMismatchError, UndefinedCorrelationError
from ppisp.evaluation.metrics import pearson
from ppisp.isp.crf import crf_scalar
from ppisp.isp.params import CrfParams, VignettingParams
from ppisp.isp.serialize import ParamSet
from ppisp.isp.vignetting import falloff_curve

logger = logging.getLogger(__name__)

CURVE_POINTS = 256


@dataclass
class IdentifiabilityFit:
    """Least-squares fit gt ~ slope * recovered + intercept."""

    slope: float
    intercept: float
    residual_std: float
    r: float
    n: int

    def to_dict(self) -> dict:
        return {'slope': self.slope, 'intercept': self.intercept,
                'residual_std': self.residual_std, 'r': self.r, 'n': self.n}


def exposure_identifiability(recovered: Sequence[float], gt: Sequence[float]) -> IdentifiabilityFit:
    """
    Affine fit mapping recovered exposure offsets onto the true ones.

    Raises:
        ShapeMismatchError: series of different lengths
        UndefinedCorrelationError: fewer than 3 frames, or a constant series
    """
    x = np.asarray(recovered, dtype=np.float64).ravel()
    y = np.asarray(gt, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeMismatchError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 3:
        raise UndefinedCorrelationError("identifiability fit needs at least 3 frames")
    r = pearson(x, y)
    dx = x - x.mean()
    slope = float(np.dot(dx, y - y.mean()) / np.dot(dx, dx))
    intercept = float(y.mean() - slope * x.mean())
    residual = y - (slope * x + intercept)
    return IdentifiabilityFit(slope=slope, intercept=intercept,
                              residual_std=float(np.std(residual)), r=r, n=int(x.size))


def decoupling_pcc(delta_t: Sequence[float], white_offsets) -> Tuple[float, float]:
    """
    Correlation of the exposure offset with each white-point offset component.

    Args:
        delta_t: Per-frame exposure offsets (N,)
        white_offsets: Per-frame white-point chromaticity offsets (N, 2)

    Raises:
        UndefinedCorrelationError: fewer than 3 frames, or a constant series
    """
    t = np.asarray(delta_t, dtype=np.float64).ravel()
    w = np.asarray(white_offsets, dtype=np.float64).reshape(-1, 2)
    if t.size < 3:
        raise UndefinedCorrelationError("decoupling analysis needs at least 3 frames")
    if w.shape[0] != t.size:
        raise ShapeMismatchError(f"{t.size} exposure offsets but {w.shape[0]} white points")
    return pearson(t, w[:, 0]), pearson(t, w[:, 1])


def curve_grid(points: int = CURVE_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def vignetting_curve(params: VignettingParams, points: int = CURVE_POINTS) -> np.ndarray:
    """Falloff along the radius from each channel's optical center, points x 3."""
    radius = curve_grid(points)
    return np.stack([falloff_curve(radius, params.alpha[k]) for k in range(3)], axis=1)


def crf_curve(params: CrfParams, points: int = CURVE_POINTS) -> np.ndarray:
    """Each channel's response sampled on [0, 1], points x 3."""
    x = curve_grid(points)[:, None]
    return crf_scalar(x, params.tau, params.eta, params.xi, params.gamma)


def curve_rmse(a, b) -> np.ndarray:
    """Per-channel RMSE between two points x 3 curves."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"curve shapes differ: {a.shape} vs {b.shape}")
    return np.sqrt(np.mean((a - b) ** 2, axis=0))


def crf_rmse_aligned(recovered: CrfParams, truth: CrfParams, intercept: float,
                     points: int = CURVE_POINTS) -> np.ndarray:
    """
    Per-channel RMSE between recovered and true CRFs after the exposure fit.

    The recovered curve is evaluated at x * 2^-intercept, on the grid points
    where that stays within [0, 1].
    """
    x = curve_grid(points)
    shifted = x * 2.0 ** (-intercept)
    keep = shifted <= 1.0
    if not np.any(keep):
        raise UndefinedCorrelationError("no grid points left after the exposure shift")
    xs = x[keep][:, None]
    rec = crf_scalar(np.clip(shifted[keep], 0.0, 1.0)[:, None],
                     recovered.tau, recovered.eta, recovered.xi, recovered.gamma)
    tru = crf_scalar(xs, truth.tau, truth.eta, truth.xi, truth.gamma)
    return curve_rmse(rec, tru)


@dataclass
class SensorAnalysis:
    sensor_id: str
    identifiability: Optional[IdentifiabilityFit]
    decoupling: Optional[Tuple[float, float]]
    vignetting_rmse: List[float]
    crf_rmse: List[float]
    decoupling_truth: Optional[Tuple[float, float]] = None    # Same PCC on the true offsets

    def to_dict(self) -> dict:
        return {
            'sensor': self.sensor_id,
            'identifiability': self.identifiability.to_dict() if self.identifiability else None,
            'decoupling_pcc': list(self.decoupling) if self.decoupling else None,
            'decoupling_pcc_truth': (list(self.decoupling_truth) if self.decoupling_truth
                                     else None),
            'vignetting_rmse': self.vignetting_rmse,
            'crf_rmse': self.crf_rmse,
        }


@dataclass
class ParamAnalysis:
    sensors: Dict[str, SensorAnalysis] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {sid: a.to_dict() for sid, a in sorted(self.sensors.items())}


def analyze_params(recovered: ParamSet, truth: ParamSet,
                   frame_ids: Optional[Sequence[str]] = None) -> ParamAnalysis:
    """
    Compare recovered parameters to ground truth, sensor by sensor.

    Frames are those present in both sets (optionally restricted to
    ``frame_ids``). Analyses that are undefined for the data, such as the
    decoupling PCC when the white point never moves, are logged and left
    empty.
    """
    ids = [fid for fid in sorted(recovered.frames) if fid in truth.frames]
    if frame_ids is not None:
        wanted = set(frame_ids)
        ids = [fid for fid in ids if fid in wanted]

    analysis = ParamAnalysis()
    for sid in sorted(recovered.sensors):
        if sid not in truth.sensors:
            logger.warning(f"No ground truth for sensor {sid}; skipping")
            continue
        sensor_ids = [fid for fid in ids if recovered.frame_sensors.get(fid) == sid]
        rec_dt = [recovered.frames[fid].delta_t for fid in sensor_ids]
        gt_dt = [truth.frames[fid].delta_t for fid in sensor_ids]
        whites = [recovered.frames[fid].color_offsets(recovered.blocks)[3] for fid in sensor_ids]
        true_whites = [truth.frames[fid].color_offsets(truth.blocks)[3] for fid in sensor_ids]

        fit = None
        try:
            fit = exposure_identifiability(rec_dt, gt_dt)
        except UndefinedCorrelationError as e:
            logger.warning(f"{sid}: exposure identifiability undefined: {e}")
        decoupling = None
        try:
            decoupling = decoupling_pcc(rec_dt, whites)
        except UndefinedCorrelationError as e:
            logger.warning(f"{sid}: decoupling PCC undefined: {e}")
        decoupling_truth = None
        if decoupling is not None:
            try:
                decoupling_truth = decoupling_pcc(gt_dt, true_whites)
            except UndefinedCorrelationError as e:
                logger.warning(f"{sid}: ground-truth decoupling PCC undefined: {e}")

        rec_sensor, true_sensor = recovered.sensors[sid], truth.sensors[sid]
        vig = curve_rmse(vignetting_curve(rec_sensor.vignetting),
                         vignetting_curve(true_sensor.vignetting))
        intercept = fit.intercept if fit is not None else 0.0
        crf = crf_rmse_aligned(rec_sensor.crf, true_sensor.crf, intercept)
        analysis.sensors[sid] = SensorAnalysis(
            sensor_id=sid, identifiability=fit, decoupling=decoupling,
            vignetting_rmse=[float(v) for v in vig], crf_rmse=[float(v) for v in crf],
            decoupling_truth=decoupling_truth)
    return analysis
