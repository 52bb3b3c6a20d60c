# src/ppisp/isp/color.py
"""Chromaticity homography color correction.

The homography maps lifted RG chromaticities and is applied to RGI
colors, followed by an intensity renormalization so the channel sum of
every pixel is preserved. This keeps white balance decoupled from
exposure.

The construction works on plain arrays and on ``grad.dual.Dual`` values,
which is how the backward pass obtains dH/dΔc.
"""

import logging

import numpy as np

from ppisp.core.image import RGB_TO_RGI, RGI_TO_RGB, ImageLike, as_array
from ppisp.errors import DegenerateHomographyError

logger = logging.getLogger(__name__)

# Fixed sources: red, green and blue primaries and neutral white.
SOURCE_CHROMATICITIES = np.array([
    [1.0, 0.0],
    [0.0, 1.0],
    [0.0, 0.0],
    [1.0 / 3.0, 1.0 / 3.0],
])
SOURCE_MATRIX = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [1.0, 1.0, 1.0],
])
SOURCE_MATRIX_INV = np.linalg.inv(SOURCE_MATRIX)

NORMALIZATION_EPS = 1e-8
DEGENERACY_TOL = 1e-12


def _value(x):
    return getattr(x, 'value', x)


def _stack(items, axis=0):
    for item in items:
        if hasattr(item, 'stack'):
            return item.stack(items, axis=axis)
    return np.stack([np.asarray(i, dtype=np.float64) for i in items], axis=axis)


def _lift(c):
    return _stack([c[0], c[1], 1.0])


def _cross(a, b):
    return _stack([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


def _skew(v):
    return _stack([
        _stack([0.0, -v[2], v[1]]),
        _stack([v[2], 0.0, -v[0]]),
        _stack([-v[1], v[0], 0.0]),
    ])


def target_chromaticities(offsets):
    """Targets c_t = c_s + Δc, shape 4 x 2 (order R, G, B, W)."""
    return offsets + SOURCE_CHROMATICITIES


def _target_geometry(targets):
    """Lifted target primaries T and white-point constraint matrix M."""
    T = _stack([_lift(targets[0]), _lift(targets[1]), _lift(targets[2])], axis=1)
    if abs(np.linalg.det(_value(T))) < DEGENERACY_TOL:
        raise DegenerateHomographyError("target primaries are colinear (singular T)")
    M = _skew(_lift(targets[3])) @ T
    if np.linalg.matrix_rank(_value(M), tol=DEGENERACY_TOL) < 2:
        raise DegenerateHomographyError("white-point constraint has rank < 2")
    return T, M


def construct_homography(targets):
    """
    Homography mapping the fixed sources onto the given targets.

    Three correspondences fix H = T diag(k) S^-1 up to the column scales k;
    the white point fixes k as the null vector of M = [c_t,W]_x T, taken as
    the cross product of M's two largest rows. Normalized so H[2, 2] = 1.

    Args:
        targets: 4 x 2 target chromaticities (array or Dual)

    Raises:
        DegenerateHomographyError: singular T, rank(M) < 2, or |k| too small
    """
    T, M = _target_geometry(targets)

    norms = np.linalg.norm(_value(M), axis=1)
    i, j = sorted(np.argsort(-norms, kind='stable')[:2])
    k = _cross(M[i], M[j])
    if np.linalg.norm(_value(k)) < DEGENERACY_TOL:
        raise DegenerateHomographyError("column scales k vanish")

    H = (T * k[None, :]) @ SOURCE_MATRIX_INV
    h33 = H[2, 2]
    if abs(_value(h33)) < DEGENERACY_TOL:
        raise DegenerateHomographyError("H[2,2] vanishes; cannot normalize")
    return H / h33


def build_homography(offsets) -> np.ndarray:
    """Homography for chromaticity offsets Δc (4 x 2, order R, G, B, W)."""
    offsets = np.asarray(offsets, dtype=np.float64)
    return construct_homography(target_chromaticities(offsets))


def build_homography_dlt(offsets) -> np.ndarray:
    """
    Same homography via the classical 4-point DLT.

    Stacks two equations per correspondence into A h = 0 and takes the
    right singular vector of the smallest singular value.

    Raises:
        DegenerateHomographyError: same configurations as build_homography,
            or a null space of dimension > 1
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    targets = target_chromaticities(offsets)
    _target_geometry(targets)

    rows = []
    for (x, y), (xp, yp) in zip(SOURCE_CHROMATICITIES, targets):
        rows.append([0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, yp])
        rows.append([x, y, 1.0, 0.0, 0.0, 0.0, -xp * x, -xp * y, -xp])
    A = np.asarray(rows)

    _, singular, vt = np.linalg.svd(A)
    if singular[-1] < DEGENERACY_TOL * max(singular[0], 1.0):
        raise DegenerateHomographyError("DLT system has a null space of dimension > 1")
    H = vt[-1].reshape(3, 3)
    if abs(H[2, 2]) < DEGENERACY_TOL:
        raise DegenerateHomographyError("H[2,2] vanishes; cannot normalize")
    return H / H[2, 2]


def dehomogenize(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return v[..., :2] / v[..., 2:3]


def apply_color_correction(image: ImageLike, H: np.ndarray,
                           eps: float = NORMALIZATION_EPS) -> np.ndarray:
    """
    Per pixel: y = C^-1 (n(x) * H C x) with n(x) = (R+G+B) / ([H C x]_3 + eps).

    Returns:
        H x W x 3 array; the channel sum of each pixel is preserved up to
        the relative eps perturbation.
    """
    x = as_array(image)
    A = np.asarray(H, dtype=np.float64) @ RGB_TO_RGI
    z = x @ A.T
    n = x.sum(axis=-1) / (z[..., 2] + eps)
    return (n[..., None] * z) @ RGI_TO_RGB.T
