# src/ppisp/evaluation/metrics.py
"""Image quality metrics and correlation."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ppisp.core.image import ImageBuffer, ImageLike
from ppisp.errors import ShapeMismatchError, UndefinedCorrelationError

PSNR_CAP = 99.0
MSE_FLOOR = 1e-10
RELATIVE_SPREAD_TOL = 1e-12


def _is_constant(values: np.ndarray, centered: np.ndarray) -> bool:
    spread = float(np.dot(centered, centered))
    return spread <= RELATIVE_SPREAD_TOL ** 2 * float(np.dot(values, values))


def _pair(pred: ImageLike, gt: ImageLike):
    p = np.asarray(pred.data if isinstance(pred, ImageBuffer) else pred, dtype=np.float64)
    g = np.asarray(gt.data if isinstance(gt, ImageBuffer) else gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ShapeMismatchError(f"prediction {p.shape} and ground truth {g.shape} differ in shape")
    return p, g


def mse(pred: ImageLike, gt: ImageLike) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean((p - g) ** 2))


def psnr_from_mse(value: float) -> float:
    if value < MSE_FLOOR:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / value)))


def psnr(pred: ImageLike, gt: ImageLike) -> float:
    """PSNR in dB with peak 1.0, capped at 99 dB."""
    return psnr_from_mse(mse(pred, gt))


@dataclass
class AffineAlignment:
    aligned: np.ndarray         # a * pred + b per channel, clamped to [0, 1]
    coefficients: np.ndarray    # channels x 2, rows (a, b)
    mse_unclamped: float        # MSE of the affine fit before clamping


def affine_align(pred: ImageLike, gt: ImageLike) -> AffineAlignment:
    """
    Per-channel least-squares affine alignment of pred onto gt.

    A channel with constant prediction falls back to a = 1 and a pure
    offset b = mean(gt) - mean(pred).
    """
    p, g = _pair(pred, gt)
    channels = p.shape[-1]
    pc = p.reshape(-1, channels)
    gc = g.reshape(-1, channels)
    coefficients = np.empty((channels, 2))
    for c in range(channels):
        x, y = pc[:, c], gc[:, c]
        dx = x - x.mean()
        if _is_constant(x, dx):
            a = 1.0
        else:
            a = float(np.dot(dx, y - y.mean()) / np.dot(dx, dx))
        coefficients[c] = (a, float(y.mean() - a * x.mean()))

    fitted = p * coefficients[:, 0] + coefficients[:, 1]
    return AffineAlignment(
        aligned=np.clip(fitted, 0.0, 1.0),
        coefficients=coefficients,
        mse_unclamped=float(np.mean((fitted - g) ** 2)),
    )


def psnr_cc(pred: ImageLike, gt: ImageLike) -> float:
    """PSNR after per-channel affine alignment."""
    _, g = _pair(pred, gt)
    return psnr(affine_align(pred, gt).aligned, g)


def pearson(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Pearson correlation coefficient.

    Raises:
        ShapeMismatchError: series of different lengths
        UndefinedCorrelationError: fewer than 2 values, or zero variance
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeMismatchError(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < 2:
        raise UndefinedCorrelationError("correlation needs at least 2 values")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(np.dot(dx, dx)), float(np.dot(dy, dy))
    if _is_constant(x, dx) or _is_constant(y, dy):
        raise UndefinedCorrelationError("correlation is undefined for a zero-variance series")
    r = float(np.dot(dx, dy) / np.sqrt(sxx * syy))
    return float(np.clip(r, -1.0, 1.0))
