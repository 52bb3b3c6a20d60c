# tests/test_isp_ops.py
"""Tests for the exposure, vignetting and CRF operators and their composition."""

import numpy as np
import pytest

from ppisp.core.image import ImageBuffer
from ppisp.isp.crf import apply_crf, crf_base, crf_knee, crf_scalar
from ppisp.isp.exposure import apply_exposure, exposure_gain
from ppisp.isp.params import CrfParams, FrameParams, SensorParams, VignettingParams
from ppisp.isp.pipeline import pipeline_forward, run_pipeline
from ppisp.isp.vignetting import (
    apply_vignetting,
    normalized_coordinates,
    vignette_factor,
    vignetting_field,
)


class TestExposure:
    """Test the exposure offset."""

    def test_one_stop_up(self):
        np.testing.assert_allclose(apply_exposure(np.full((1, 1, 3), 0.5), 1.0), 1.0)

    def test_two_stops_down(self):
        np.testing.assert_allclose(apply_exposure(np.full((1, 1, 3), 0.8), -2.0), 0.2)

    def test_zero_is_identity(self, radiance):
        np.testing.assert_array_equal(apply_exposure(radiance, 0.0), radiance.data)

    def test_gain(self):
        assert exposure_gain(3.0) == 8.0


class TestVignetting:
    """Test the chromatic vignetting operator."""

    def test_corner_radius_is_one(self):
        """The half-diagonal has unit length."""
        coords = normalized_coordinates(7, 11)
        assert np.hypot(*coords[0, 0]) == pytest.approx(1.0, abs=1e-12)
        assert np.hypot(*coords[-1, -1]) == pytest.approx(1.0, abs=1e-12)

    def test_center_pixel(self):
        """Odd sizes put a pixel at the exact center, where the factor is 1."""
        coords = normalized_coordinates(5, 5)
        assert vignette_factor(coords[2, 2], [0.0, 0.0], [-0.9, 0.3, -0.2]) == 1.0

    def test_zero_alpha_is_identity(self, radiance):
        out = apply_vignetting(radiance, VignettingParams.identity())
        np.testing.assert_array_equal(out, radiance.data)

    def test_corner_half(self):
        """alpha = (-0.5, 0, 0) halves the corner."""
        coords = normalized_coordinates(9, 13)
        factor = vignette_factor(coords[0, -1], [0.0, 0.0], [-0.5, 0.0, 0.0])
        assert factor == pytest.approx(0.5, abs=1e-12)

    def test_corner_two_terms(self):
        coords = normalized_coordinates(9, 13)
        factor = vignette_factor(coords[-1, 0], [0.0, 0.0], [-0.25, -0.25, 0.0])
        assert factor == pytest.approx(0.5, abs=1e-12)

    def test_channels_independent(self):
        """Only the red channel is attenuated."""
        alpha = np.zeros((3, 3))
        alpha[0] = [-0.5, 0.0, 0.0]
        params = VignettingParams(mu=np.zeros((3, 2)), alpha=alpha)
        out = apply_vignetting(ImageBuffer.uniform(6, 8, 1.0), params)
        np.testing.assert_array_equal(out[..., 1:], 1.0)
        assert out[0, 0, 0] == pytest.approx(0.5, abs=1e-12)
        assert np.all(out[..., 0] < 1.0)

    def test_clipped_to_unit_interval(self):
        """A strongly positive polynomial is clipped to 1, a strongly negative one to 0."""
        alpha = np.array([[2.0, 0.0, 0.0], [-4.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        field = vignetting_field(9, 9, VignettingParams(mu=np.zeros((3, 2)), alpha=alpha))
        assert field[..., 0].max() == 1.0
        assert field[0, 0, 1] == 0.0

    def test_matches_scalar_evaluation(self, smooth_sensor):
        """The field agrees with a per-pixel brute-force evaluation."""
        params = smooth_sensor.vignetting
        field = vignetting_field(5, 6, params)
        half_diag = 0.5 * np.hypot(5, 4)
        for row in range(5):
            for col in range(6):
                x = (col - 2.5) / half_diag
                y = (row - 2.0) / half_diag
                for k in range(3):
                    r2 = (x - params.mu[k, 0]) ** 2 + (y - params.mu[k, 1]) ** 2
                    a1, a2, a3 = params.alpha[k]
                    expected = min(max(1 + a1 * r2 + a2 * r2 ** 2 + a3 * r2 ** 3, 0.0), 1.0)
                    assert field[row, col, k] == pytest.approx(expected, abs=1e-14)

    def test_field_cached_per_params(self, smooth_sensor):
        """Equal parameters reuse one read-only field; other parameters get their own."""
        params = smooth_sensor.vignetting
        first = vignetting_field(7, 9, params)
        again = vignetting_field(7, 9, VignettingParams(mu=params.mu.copy(),
                                                        alpha=params.alpha.copy()))
        assert again is first
        assert not first.flags.writeable
        other = vignetting_field(7, 9, VignettingParams.identity())
        assert other is not first
        np.testing.assert_array_equal(other, 1.0)
        assert vignetting_field(8, 9, params).shape == (8, 9, 3)


class TestCrf:
    """Test the camera response function."""

    def test_identity_parameters(self):
        """tau = eta = gamma = 1 reduces to the identity for any xi."""
        x = np.linspace(0.0, 1.0, 11)
        for xi in (0.2, 0.5, 0.8):
            np.testing.assert_allclose(crf_scalar(x, 1.0, 1.0, xi, 1.0), x, atol=1e-15)

    def test_value_at_knee(self):
        tau, eta, xi, gamma = 1.4, 1.6, 0.45, 0.6
        a = crf_knee(tau, eta, xi)
        assert crf_scalar(xi, tau, eta, xi, gamma) == pytest.approx(a ** gamma, rel=1e-14)

    def test_symmetric_s_curve(self):
        assert crf_knee(2.0, 2.0, 0.5) == 0.5
        assert crf_scalar(0.5, 2.0, 2.0, 0.5, 1.0) == pytest.approx(0.5, abs=1e-15)

    def test_endpoints(self):
        assert crf_scalar(0.0, 1.4, 1.6, 0.45, 0.5) == 0.0
        assert crf_scalar(1.0, 1.4, 1.6, 0.45, 0.5) == 1.0

    def test_continuous_slope_at_knee(self):
        """Both branches have the same derivative at xi."""
        tau, eta, xi = 1.4, 1.6, 0.45
        h = 1e-6
        left = (crf_base(xi, tau, eta, xi) - crf_base(xi - h, tau, eta, xi)) / h
        right = (crf_base(xi + h, tau, eta, xi) - crf_base(xi, tau, eta, xi)) / h
        assert left == pytest.approx(right, rel=1e-4)

    def test_monotonic(self):
        x = np.linspace(0.0, 1.0, 201)
        y = crf_scalar(x, 0.7, 2.5, 0.3, 0.45)
        assert np.all(np.diff(y) > 0)

    def test_matches_two_branch_formula(self, rng):
        """Branch-wise evaluation agrees with evaluating both branches everywhere."""
        x = np.concatenate([np.linspace(0.0, 1.0, 257), rng.uniform(0.0, 1.0, 500)])[:, None]
        tau = np.array([0.7, 1.4, 2.2])
        eta = np.array([2.5, 1.6, 0.9])
        xi = np.array([0.3, 0.45, 0.6])
        a = crf_knee(tau, eta, xi)
        lower = a * (np.minimum(x, xi) / xi) ** tau
        upper = 1.0 - (1.0 - a) * (np.maximum(1.0 - x, 0.0) / (1.0 - xi)) ** eta
        expected = np.where(x <= xi, lower, upper)
        out = crf_base(x, tau, eta, xi)
        assert out.shape == (757, 3)
        np.testing.assert_allclose(out, expected, rtol=1e-14, atol=1e-15)
        np.testing.assert_allclose(crf_scalar(x, tau, eta, xi, [0.45, 1.0, 2.0]),
                                   expected ** np.array([0.45, 1.0, 2.0]), rtol=1e-13)

    def test_apply_identity_clamps(self):
        data = np.array([[[-0.2, 0.4, 1.7]]])
        out = apply_crf(data, CrfParams.identity())
        np.testing.assert_allclose(out[0, 0], [0.0, 0.4, 1.0], atol=1e-15)

    def test_apply_saturated_input(self):
        params = CrfParams.from_materialized(tau=1.4, eta=1.6, xi=0.45, gamma=0.5)
        assert apply_crf(np.full((1, 1, 3), 1.7), params)[0, 0, 0] == 1.0

    def test_per_channel_gamma(self):
        """Channels differing only in gamma see powers of the same S-curve."""
        params = CrfParams.from_materialized(tau=1.4, eta=1.6, xi=0.45, gamma=[1.0, 2.0, 0.5])
        out = apply_crf(np.full((1, 1, 3), 0.25), params)[0, 0]
        f0 = float(crf_base(0.25, 1.4, 1.6, 0.45))
        np.testing.assert_allclose(out, [f0, f0 ** 2, f0 ** 0.5], rtol=1e-12)

    def test_materialized_round_trip(self):
        params = CrfParams.from_materialized(tau=[1.4, 1.2, 1.0], eta=1.6, xi=0.45, gamma=0.5)
        np.testing.assert_allclose(params.tau, [1.4, 1.2, 1.0], rtol=1e-14)
        np.testing.assert_allclose(params.xi, 0.45, rtol=1e-14)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            CrfParams.from_materialized(tau=1.0, eta=1.0, xi=1.0, gamma=1.0)
        with pytest.raises(ValueError):
            CrfParams.from_materialized(tau=-1.0, eta=1.0, xi=0.5, gamma=1.0)


class TestPipeline:
    """Test the composed forward pipeline."""

    def test_defaults_clamp_radiance(self, rng):
        radiance = ImageBuffer(rng.uniform(0.0, 1.5, (6, 7, 3)))
        out = pipeline_forward(radiance, SensorParams.identity(), FrameParams.identity())
        np.testing.assert_allclose(out, np.clip(radiance.data, 0.0, 1.0), atol=1e-6)

    def test_exposure_only(self):
        frame = FrameParams(delta_t=1.0, theta=np.zeros((4, 2)))
        out = pipeline_forward(ImageBuffer.uniform(4, 4, 0.09), SensorParams.identity(), frame)
        np.testing.assert_allclose(out, 0.18, atol=1e-6)

    def test_output_in_unit_interval(self, radiance, smooth_sensor, smooth_frame):
        frame = smooth_frame.replace(delta_t=3.0)
        out = pipeline_forward(radiance, smooth_sensor, frame)
        assert out.min() >= 0.0
        assert out.max() <= 1.0

    def test_trace_stages(self, radiance, smooth_sensor, smooth_frame):
        """The trace records each stage in order."""
        trace = run_pipeline(radiance, smooth_sensor, smooth_frame)
        np.testing.assert_allclose(trace.exposed, radiance.data * 2 ** smooth_frame.delta_t)
        np.testing.assert_allclose(trace.vignetted, trace.exposed * trace.vignette)
        np.testing.assert_allclose(trace.output, apply_crf(trace.corrected, smooth_sensor.crf))
        assert trace.homography[2, 2] == 1.0
