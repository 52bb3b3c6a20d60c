# src/ppisp/isp/crf.py
"""Camera response function: a C1 piecewise power S-curve followed by gamma.

    f0(x) = a (x / xi)^tau                     for 0 <= x <= xi
    f0(x) = 1 - b ((1 - x) / (1 - xi))^eta     for xi < x <= 1
    crf(x) = f0(x)^gamma

with a = eta xi / (tau (1 - xi) + eta xi) and b = 1 - a, which matches
the slopes of both branches at xi.
"""

import numpy as np

from ppisp.core.image import ImageLike, as_array
from ppisp.isp.params import CrfParams


def crf_knee(tau, eta, xi):
    """Value a of f0 at the inflection point xi."""
    return eta * xi / (tau * (1.0 - xi) + eta * xi)


def crf_base(x, tau, eta, xi):
    """The S-curve f0 (no gamma). x must lie in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    tau, eta, xi = (np.asarray(p, dtype=np.float64) for p in (tau, eta, xi))
    a = crf_knee(tau, eta, xi)
    b = 1.0 - a
    shape = np.broadcast_shapes(x.shape, tau.shape, eta.shape, xi.shape)
    lower = np.broadcast_to(x <= xi, shape)
    upper = ~lower

    # Each power is evaluated only where its branch applies.
    out = np.empty(shape)
    np.divide(x, xi, out=out)
    np.power(out, tau, out=out, where=lower)
    np.multiply(out, a, out=out, where=lower)
    u = np.maximum(1.0 - x, 0.0) / (1.0 - xi)
    np.power(np.broadcast_to(u, shape), eta, out=out, where=upper)
    np.multiply(out, -b, out=out, where=upper)
    np.add(out, 1.0, out=out, where=upper)
    return out


def crf_scalar(x, tau, eta, xi, gamma):
    """crf(x) = f0(x)^gamma on [0, 1]; vectorized over x and parameters."""
    base = crf_base(x, tau, eta, xi)
    gamma = np.asarray(gamma, dtype=np.float64)
    shape = np.broadcast_shapes(base.shape, gamma.shape)
    if base.shape != shape:
        base = np.broadcast_to(base, shape).copy()
    if np.all(gamma == 1.0):
        return base
    return np.power(base, gamma, out=base)


def apply_crf(image: ImageLike, params: CrfParams) -> np.ndarray:
    """Clamp each channel to [0, 1] (sensor saturation), then apply its CRF."""
    x = np.clip(as_array(image), 0.0, 1.0)
    return crf_scalar(x, params.tau, params.eta, params.xi, params.gamma)
