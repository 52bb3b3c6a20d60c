# src/ppisp/grad/adjoints.py
"""Reverse-mode adjoints of the ISP operators.

Each ``*_backward`` function takes the forward inputs and an upstream
gradient and returns the gradient with respect to its image input and its
parameters. ``pipeline_backward`` chains them in reverse order:
CRF -> color correction -> vignetting -> exposure.

Clamps pass the gradient on the closed interval [0, 1] and block it
strictly outside.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ppisp.core.image import RGB_TO_RGI, RGI_TO_RGB, ImageLike, as_array
from ppisp.errors import ShapeMismatchError
from ppisp.grad.dual import Dual
from ppisp.isp.color import NORMALIZATION_EPS, construct_homography, target_chromaticities
from ppisp.isp.crf import crf_base, crf_knee
from ppisp.isp.params import CrfParams, FrameParams, SensorParams, VignettingParams
from ppisp.isp.pipeline import PipelineTrace, run_pipeline
from ppisp.isp.precondition import PreconditionBlocks, default_blocks
from ppisp.isp.vignetting import falloff_polynomial, normalized_coordinates

logger = logging.getLogger(__name__)


@dataclass
class ParamGradients:
    """Gradients laid out like SensorParams.to_arrays / FrameParams.to_arrays."""

    vig_mu: np.ndarray          # 3 x 2
    vig_alpha: np.ndarray       # 3 x 3
    crf_raw: np.ndarray         # 3 x 4, w.r.t. the unconstrained coordinates
    delta_t: float
    theta: np.ndarray           # 4 x 2, preconditioned coordinates
    radiance: np.ndarray        # H x W x 3

    def sensor_arrays(self) -> Dict[str, np.ndarray]:
        return {'vig_mu': self.vig_mu, 'vig_alpha': self.vig_alpha, 'crf_raw': self.crf_raw}

    def frame_arrays(self) -> Dict[str, np.ndarray]:
        return {'delta_t': np.array(self.delta_t), 'theta': self.theta}


def _closed_unit_mask(x: np.ndarray) -> np.ndarray:
    return (x >= 0.0) & (x <= 1.0)


def _power_slope(u: np.ndarray, p) -> np.ndarray:
    """d/du u^p for u >= 0; at u = 0 the slope is 1 when p = 1 and 0 otherwise."""
    p = np.broadcast_to(p, u.shape)
    with np.errstate(divide='ignore', invalid='ignore'):
        slope = p * np.power(u, p - 1.0)
    at_zero = np.where(p == 1.0, 1.0, 0.0)
    return np.where(u > 0.0, slope, at_zero)


def _safe_log(u: np.ndarray) -> np.ndarray:
    return np.log(np.where(u > 0.0, u, 1.0))


def crf_backward(x, params: CrfParams, upstream) -> Tuple[np.ndarray, np.ndarray]:
    """
    Adjoint of apply_crf.

    Args:
        x: H x W x 3 CRF input before the [0, 1] clamp
        params: per-channel CRF
        upstream: gradient w.r.t. the CRF output

    Returns:
        (gradient w.r.t. x, gradient w.r.t. params.raw)
    """
    x_raw = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    xc = np.clip(x_raw, 0.0, 1.0)
    tau, eta, xi, gamma = params.tau, params.eta, params.xi, params.gamma

    a = crf_knee(tau, eta, xi)
    b = 1.0 - a
    denom = tau * (1.0 - xi) + eta * xi
    da_dtau = -eta * xi * (1.0 - xi) / denom ** 2
    da_deta = xi * tau * (1.0 - xi) / denom ** 2
    da_dxi = eta * tau / denom ** 2

    lower = xc <= xi
    s = xc / xi
    u = np.maximum(1.0 - xc, 0.0) / (1.0 - xi)
    f0 = crf_base(xc, tau, eta, xi)
    y = np.power(f0, gamma)

    # Input slope. The lower branch is rewritten as a^gamma s^(tau gamma) so
    # that f0 = 0 never divides.
    slope_lower = np.power(a, gamma) / xi * _power_slope(s, tau * gamma)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratio = np.where(f0 > 0.0, y / f0, 0.0)
    slope_upper = gamma * ratio * b / (1.0 - xi) * _power_slope(u, eta)
    slope = np.where(lower, slope_lower, slope_upper)
    grad_x = g * slope * _closed_unit_mask(x_raw)

    # Materialized parameter derivatives, one branch at a time.
    log_s = _safe_log(s)
    u_eta = np.power(u, eta)
    u_eta_log = u_eta * _safe_log(u)
    with np.errstate(divide='ignore', invalid='ignore'):
        scale_upper = np.where(f0 > 0.0, gamma * y / f0, 0.0)

    d_tau = np.where(lower, y * gamma * (da_dtau / a + log_s), scale_upper * da_dtau * u_eta)
    d_eta = np.where(lower, y * gamma * da_deta / a,
                     scale_upper * (da_deta * u_eta - b * u_eta_log))
    d_xi = np.where(lower, y * gamma * (da_dxi / a - tau / xi),
                    scale_upper * (da_dxi * u_eta - b * eta * u_eta / (1.0 - xi)))
    d_gamma = y * _safe_log(f0)

    flat_g = g.reshape(-1, 3)
    grad_materialized = np.stack([
        np.sum(flat_g * d.reshape(-1, 3), axis=0) for d in (d_tau, d_eta, d_xi, d_gamma)
    ], axis=1)
    return grad_x, grad_materialized * params.materialization_jacobian()


def color_backward(x, H, upstream,
                   eps: float = NORMALIZATION_EPS) -> Tuple[np.ndarray, np.ndarray]:
    """
    Adjoint of apply_color_correction.

    Returns:
        (gradient w.r.t. the input image, gradient w.r.t. H)
    """
    x = np.asarray(x, dtype=np.float64)
    g_out = np.asarray(upstream, dtype=np.float64)
    A = np.asarray(H, dtype=np.float64) @ RGB_TO_RGI
    z = x @ A.T
    s = x.sum(axis=-1)
    d = z[..., 2] + eps
    n = s / d

    g_q = g_out @ RGI_TO_RGB
    g_n = np.sum(g_q * z, axis=-1)
    g_z = n[..., None] * g_q
    g_z[..., 2] -= g_n * s / (d * d)
    g_x = g_z @ A + (g_n / d)[..., None]

    g_A = g_z.reshape(-1, 3).T @ x.reshape(-1, 3)
    return g_x, g_A @ RGB_TO_RGI.T


def homography_jacobian(offsets) -> np.ndarray:
    """dH/dΔc as a 4 x 2 x 3 x 3 array, by forward-mode duals."""
    offsets = np.asarray(offsets, dtype=np.float64)
    H = construct_homography(target_chromaticities(Dual.variables(offsets)))
    return H.tangent.reshape(offsets.shape + (3, 3))


def homography_backward(offsets, grad_H) -> np.ndarray:
    """Contract dL/dH with dH/dΔc; returns a 4 x 2 gradient w.r.t. Δc."""
    return np.einsum('kdij,ij->kd', homography_jacobian(offsets),
                     np.asarray(grad_H, dtype=np.float64))


def vignetting_backward(image, params: VignettingParams,
                        upstream) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Adjoint of apply_vignetting.

    Returns:
        (gradient w.r.t. the image, w.r.t. mu (3 x 2), w.r.t. alpha (3 x 3))
    """
    image = np.asarray(image, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    coords = normalized_coordinates(image.shape[0], image.shape[1])

    grad_image = np.empty_like(image)
    grad_mu = np.zeros((3, 2))
    grad_alpha = np.zeros((3, 3))
    for k in range(3):
        diff = coords - params.mu[k]
        r2 = np.sum(diff * diff, axis=-1)
        a1, a2, a3 = params.alpha[k]
        poly = falloff_polynomial(r2, params.alpha[k])
        factor = np.clip(poly, 0.0, 1.0)
        grad_image[..., k] = g[..., k] * factor

        g_poly = g[..., k] * image[..., k] * _closed_unit_mask(poly)
        grad_alpha[k] = [np.sum(g_poly * r2), np.sum(g_poly * r2 ** 2), np.sum(g_poly * r2 ** 3)]
        g_r2 = g_poly * (a1 + r2 * (2.0 * a2 + 3.0 * a3 * r2))
        grad_mu[k] = -2.0 * np.sum(g_r2[..., None] * diff, axis=(0, 1))
    return grad_image, grad_mu, grad_alpha


def exposure_backward(image, delta_t: float, upstream) -> Tuple[np.ndarray, float]:
    """Adjoint of apply_exposure: (gradient w.r.t. the image, w.r.t. delta_t)."""
    image = np.asarray(image, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    gain = float(np.exp2(delta_t))
    return g * gain, float(np.log(2.0) * gain * np.sum(g * image))


def pipeline_backward(radiance: ImageLike, sensor: SensorParams, frame: FrameParams,
                      upstream_grad, blocks: Optional[PreconditionBlocks] = None,
                      trace: Optional[PipelineTrace] = None) -> ParamGradients:
    """
    Exact adjoint of pipeline_forward.

    Args:
        radiance: linear input image
        sensor: per-camera parameters
        frame: per-capture parameters
        upstream_grad: dL/d(output), same shape as the output
        blocks: preconditioning blocks (defaults to the shared ones)
        trace: forward intermediates to reuse; recomputed when omitted

    Returns:
        ParamGradients for every parameter and the radiance

    Raises:
        ShapeMismatchError: upstream_grad does not match the image shape
    """
    blocks = blocks or default_blocks()
    L = as_array(radiance)
    g = np.asarray(getattr(upstream_grad, 'data', upstream_grad), dtype=np.float64)
    if g.shape != L.shape:
        raise ShapeMismatchError(f"upstream gradient {g.shape} does not match image {L.shape}")
    if trace is None:
        trace = run_pipeline(L, sensor, frame, blocks)

    g_corrected, g_crf_raw = crf_backward(trace.corrected, sensor.crf, g)
    g_vignetted, g_H = color_backward(trace.vignetted, trace.homography, g_corrected)
    g_offsets = homography_backward(frame.color_offsets(blocks), g_H)
    g_exposed, g_mu, g_alpha = vignetting_backward(trace.exposed, sensor.vignetting, g_vignetted)
    g_radiance, g_delta_t = exposure_backward(L, frame.delta_t, g_exposed)

    return ParamGradients(
        vig_mu=g_mu,
        vig_alpha=g_alpha,
        crf_raw=g_crf_raw,
        delta_t=g_delta_t,
        theta=blocks.pullback(g_offsets),
        radiance=g_radiance,
    )
