# src/ppisp/isp/vignetting.py
"""Chromatic vignetting: per-channel radial falloff around an optical center.

    v(r) = clip(1 + a1 r^2 + a2 r^4 + a3 r^6, 0, 1)

Radii are measured in normalized coordinates: the geometric image center
is the origin and the half-diagonal has length 1, so the corner pixels
sit at r = 1 when the optical center is not offset.
"""

from functools import lru_cache

import numpy as np

from ppisp.core.image import ImageLike, as_array
from ppisp.isp.params import VignettingParams


@lru_cache(maxsize=8)
def _coordinate_grid(height: int, width: int) -> np.ndarray:
    half_diag = 0.5 * np.hypot(width - 1, height - 1)
    if half_diag == 0:
        half_diag = 1.0
    xs = (np.arange(width) - (width - 1) / 2.0) / half_diag
    ys = (np.arange(height) - (height - 1) / 2.0) / half_diag
    grid = np.stack(np.meshgrid(xs, ys), axis=-1)
    grid.setflags(write=False)
    return grid


def normalized_coordinates(height: int, width: int) -> np.ndarray:
    """H x W x 2 array of normalized (x, y) pixel coordinates."""
    return _coordinate_grid(int(height), int(width))


def falloff_polynomial(r2, alpha):
    """1 + a1 r^2 + a2 r^4 + a3 r^6 given the squared radius."""
    a1, a2, a3 = alpha
    return 1.0 + r2 * (a1 + r2 * (a2 + r2 * a3))


def falloff_curve(radius, alpha) -> np.ndarray:
    """Clipped falloff v(r) along a radius from the optical center."""
    r = np.asarray(radius, dtype=np.float64)
    return np.clip(falloff_polynomial(r * r, np.asarray(alpha, dtype=np.float64)), 0.0, 1.0)


def vignette_factor(pixel_coord, mu, alpha):
    """
    Attenuation at normalized pixel coordinate(s).

    Args:
        pixel_coord: (..., 2) normalized coordinates
        mu: (2,) optical-center offset
        alpha: (3,) polynomial coefficients

    Returns:
        Factor in [0, 1], shape (...)
    """
    d = np.asarray(pixel_coord, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    r2 = np.sum(d * d, axis=-1)
    return np.clip(falloff_polynomial(r2, np.asarray(alpha, dtype=np.float64)), 0.0, 1.0)


@lru_cache(maxsize=4)
def _cached_field(height: int, width: int, mu: tuple, alpha: tuple) -> np.ndarray:
    coords = normalized_coordinates(height, width)
    mu = np.reshape(mu, (3, 2))
    alpha = np.reshape(alpha, (3, 3))
    field = np.stack([vignette_factor(coords, mu[k], alpha[k]) for k in range(3)], axis=-1)
    field.setflags(write=False)
    return field


def vignetting_field(height: int, width: int, params: VignettingParams) -> np.ndarray:
    """
    H x W x 3 attenuation, one field per channel.

    Fields are cached per image size and parameter values, so rendering many
    frames of one sensor builds the field once. The returned array is read-only.
    """
    return _cached_field(int(height), int(width),
                         tuple(np.asarray(params.mu, dtype=np.float64).ravel().tolist()),
                         tuple(np.asarray(params.alpha, dtype=np.float64).ravel().tolist()))


def apply_vignetting(image: ImageLike, params: VignettingParams) -> np.ndarray:
    data = as_array(image)
    return data * vignetting_field(data.shape[0], data.shape[1], params)
