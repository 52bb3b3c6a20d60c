# tests/test_losses.py
"""Tests for the photometric loss and the regularizers."""

import numpy as np
import pytest

from ppisp.calib.losses import (
    RegWeights,
    huber,
    huber_grad,
    photometric_loss,
    reg_gradients,
    reg_terms,
    reg_total,
)
from ppisp.errors import ShapeMismatchError
from ppisp.isp.params import FrameParams, SensorParams, VignettingParams


def _random_frames(rng, count):
    return [FrameParams(delta_t=float(rng.normal(0.3, 0.5)), theta=rng.normal(0.0, 0.002, (4, 2)))
            for _ in range(count)]


class TestHuber:
    """Test the Huber penalty."""

    def test_zero(self):
        assert huber(0.0, 0.1) == 0.0

    def test_boundary(self):
        assert huber(0.1, 0.1) == pytest.approx(0.005, rel=1e-12)

    def test_linear_branch(self):
        assert huber(1.0, 0.1) == pytest.approx(0.095, rel=1e-12)
        assert huber(-1.0, 0.1) == pytest.approx(0.095, rel=1e-12)

    def test_sums_components(self):
        assert huber([0.1, 1.0], 0.1) == pytest.approx(0.1, rel=1e-12)

    def test_gradient_saturates(self):
        np.testing.assert_array_equal(huber_grad([-2.0, 0.05, 3.0], 0.1), [-0.1, 0.05, 0.1])

    def test_rejects_bad_delta(self):
        with pytest.raises(ValueError):
            huber(1.0, 0.0)


class TestPhotometricLoss:
    """Test the mean squared error and its gradient."""

    def test_identical(self, radiance):
        loss, grad = photometric_loss(radiance, radiance)
        assert loss == 0.0
        np.testing.assert_array_equal(grad, 0.0)

    def test_uniform_offset(self, radiance):
        loss, grad = photometric_loss(radiance.data + 0.1, radiance)
        assert loss == pytest.approx(0.01, rel=1e-9)
        np.testing.assert_allclose(grad, 0.2 / radiance.data.size)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            photometric_loss(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


class TestRegularizers:
    """Test the regularizer terms."""

    def test_defaults_are_zero(self):
        frames = [FrameParams.identity() for _ in range(4)]
        assert reg_total(frames, SensorParams.identity()) == 0.0

    def test_single_frame_exposure(self):
        frame = FrameParams(delta_t=1.0, theta=np.zeros((4, 2)))
        terms = reg_terms([frame], SensorParams.identity())
        assert terms.exposure == pytest.approx(0.095, rel=1e-12)
        assert terms.total == pytest.approx(0.095, rel=1e-12)

    def test_exposure_uses_frame_mean(self):
        """Offsets that cancel across frames are not penalized."""
        frames = [FrameParams(delta_t=d, theta=np.zeros((4, 2))) for d in (-1.5, 0.5, 1.0)]
        assert reg_terms(frames, SensorParams.identity()).exposure == 0.0

    def test_positive_alpha(self):
        """A positive falloff coefficient costs lambda_v a^2 plus a variance term."""
        alpha = np.zeros((3, 3))
        alpha[0, 0] = 0.2
        sensor = SensorParams.identity().replace(
            vignetting=VignettingParams(mu=np.zeros((3, 2)), alpha=alpha))
        terms = reg_terms([FrameParams.identity()], sensor)
        weights = RegWeights()
        assert terms.vignetting == pytest.approx(weights.lambda_v * 0.04, rel=1e-12)
        brute = np.mean([np.var(alpha[:, j]) for j in range(3)])
        assert terms.variance == pytest.approx(weights.lambda_var * brute, rel=1e-12)
        assert terms.variance > 0

    def test_variance_matches_brute_force(self, smooth_sensor):
        """Variance is the across-channel population variance averaged over slots."""
        terms = reg_terms([FrameParams.identity()], smooth_sensor, RegWeights(0, 0, 1.0, 0))
        alpha = smooth_sensor.vignetting.alpha
        crf = smooth_sensor.crf.materialized()
        expected = (np.mean([np.var(alpha[:, j]) for j in range(3)])
                    + np.mean([np.var(crf[:, j]) for j in range(4)]))
        assert terms.variance == pytest.approx(expected, rel=1e-12)

    def test_center_offset(self):
        mu = np.zeros((3, 2))
        mu[1] = [0.1, -0.2]
        sensor = SensorParams.identity().replace(
            vignetting=VignettingParams(mu=mu, alpha=np.zeros((3, 3))))
        terms = reg_terms([FrameParams.identity()], sensor, RegWeights(0, 0, 0, 1.0))
        assert terms.vignetting == pytest.approx(0.05, rel=1e-12)

    def test_empty_frames_rejected(self):
        with pytest.raises(ValueError):
            reg_terms([], SensorParams.identity())

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            RegWeights(lambda_b=-1.0)


class TestRegGradients:
    """Test regularizer gradients against central differences."""

    def test_sensor_gradients(self, rng, smooth_sensor):
        frames = _random_frames(rng, 3)
        alpha = np.array(smooth_sensor.vignetting.alpha)
        alpha[1, 0] = 0.05
        sensor = smooth_sensor.replace(
            vignetting=VignettingParams(mu=smooth_sensor.vignetting.mu, alpha=alpha))
        _, sensor_grads, _ = reg_gradients(frames, sensor)

        arrays = sensor.to_arrays()
        h = 1e-6
        for key, values in arrays.items():
            for index in np.ndindex(values.shape):
                plus = {k: v.copy() for k, v in arrays.items()}
                minus = {k: v.copy() for k, v in arrays.items()}
                plus[key][index] += h
                minus[key][index] -= h
                numeric = (reg_total(frames, SensorParams.from_arrays(plus))
                           - reg_total(frames, SensorParams.from_arrays(minus))) / (2 * h)
                assert sensor_grads[key][index] == pytest.approx(numeric, abs=1e-7), (key, index)

    def test_frame_gradients(self, rng, smooth_sensor):
        frames = _random_frames(rng, 3)
        _, _, frame_grads = reg_gradients(frames, smooth_sensor)
        assert len(frame_grads) == 3

        h = 1e-7
        for i, frame in enumerate(frames):
            arrays = frame.to_arrays()
            for key, values in arrays.items():
                for index in np.ndindex(values.shape):
                    def total(delta):
                        changed = {k: np.array(v, copy=True) for k, v in arrays.items()}
                        changed[key][index] += delta
                        batch = list(frames)
                        batch[i] = FrameParams.from_arrays(changed)
                        return reg_total(batch, smooth_sensor)
                    numeric = (total(h) - total(-h)) / (2 * h)
                    assert frame_grads[i][key][index] == pytest.approx(numeric, abs=1e-6)

    def test_zero_at_defaults(self):
        _, sensor_grads, frame_grads = reg_gradients([FrameParams.identity()],
                                                     SensorParams.identity())
        for value in sensor_grads.values():
            np.testing.assert_array_equal(value, 0.0)
        for value in frame_grads[0].values():
            np.testing.assert_array_equal(value, 0.0)
