# tests/test_calibrate.py
"""Tests for joint sensor and frame calibration."""

from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest

from ppisp.calib.calibrate import TRACE_COLUMNS, _BatchSampler, calibrate
from ppisp.calib.schedule import LrSchedule
from ppisp.config import CalibrationConfig, SynthConfig
from ppisp.dataset import Dataset, FrameRecord, split_for_index
from ppisp.errors import DatasetError, NumericalFailure
from ppisp.evaluation.analysis import curve_rmse, exposure_identifiability, vignetting_curve
from ppisp.isp.params import CrfParams, SensorParams, VignettingParams
from ppisp.isp.serialize import ParamSet, save_params
from ppisp.synth.capture import CapturedFrame, simulate_capture, synthesize, write_dataset
from ppisp.synth.scene import SceneSpec, gen_radiance
from ppisp.synth.script import FrameScript, simulate_ae

RECOVERY_SCENE = SceneSpec(seed=11, width=32, height=24, max_radiance=1.0)
RECOVERY_FRAMES = 8


def _config(**overrides) -> CalibrationConfig:
    values = dict(seed=0, iterations=40, batch_size=0, log_every=10,
                  schedule=LrSchedule(lr0=0.01, s_w=0, s_max=1000))
    values.update(overrides)
    return CalibrationConfig(**values)


def _recovery_config() -> CalibrationConfig:
    return _config(iterations=600, split='all', log_every=100,
                   schedule=LrSchedule(lr0=0.02, s_w=0, s_max=600))


def _write_capture_set(root, sensor: SensorParams, evs) -> ParamSet:
    """Capture RECOVERY_SCENE frames at fixed exposures with white balance off."""
    truth = ParamSet(sensors={'cam0': sensor})
    frames = []
    for i, ev in enumerate(evs):
        radiance = gen_radiance(RECOVERY_SCENE, i)
        script = FrameScript(index=i, ae_enabled=False, manual_ev=float(ev))
        observed, params = simulate_capture(radiance, sensor, script)
        record = FrameRecord(script.frame_id, 'cam0', split_for_index(i))
        frames.append(CapturedFrame(record, radiance, observed, params))
        truth.frames[record.frame_id] = params
        truth.frame_sensors[record.frame_id] = 'cam0'
    write_dataset(root, frames, truth)
    return truth


class TestBatchSampler:
    """Test frame batch sampling."""

    def test_zero_means_all(self):
        sampler = _BatchSampler(5, 0, np.random.default_rng(0))
        assert sampler.next_batch() == [0, 1, 2, 3, 4]

    def test_epoch_covers_every_frame(self):
        sampler = _BatchSampler(6, 2, np.random.default_rng(0))
        seen = []
        for _ in range(3):
            batch = sampler.next_batch()
            assert len(batch) == 2
            assert len(set(batch)) == 2
            seen.extend(batch)
        assert sorted(seen) == list(range(6))

    def test_batch_capped_at_frame_count(self):
        sampler = _BatchSampler(3, 10, np.random.default_rng(0))
        assert sorted(sampler.next_batch()) == [0, 1, 2]


class TestCalibrate:
    """Test calibrate on a small synthetic dataset."""

    def test_loss_decreases(self, tiny_dataset):
        result = calibrate(Dataset(tiny_dataset), _config())
        trace = result.trace
        assert list(trace.columns) == TRACE_COLUMNS
        assert len(trace) == 40
        assert trace['photometric'].iloc[-1] < trace['photometric'].iloc[0]
        assert np.all(np.isfinite(trace['total']))

    def test_params_cover_training_frames(self, tiny_dataset):
        result = calibrate(Dataset(tiny_dataset), _config(iterations=2))
        params = result.params
        assert set(params.sensors) == {'cam0'}
        assert sorted(params.frames) == [f"{i:04d}" for i in range(7)]
        assert set(params.frame_sensors.values()) == {'cam0'}

    def test_split_all_includes_test_frames(self, tiny_dataset):
        result = calibrate(Dataset(tiny_dataset), _config(iterations=1, split='all'))
        assert '0007' in result.params.frames

    def test_zero_iterations_is_identity(self, tiny_dataset):
        result = calibrate(Dataset(tiny_dataset), _config(iterations=0))
        assert result.trace.empty
        sensor = result.params.sensors['cam0']
        np.testing.assert_array_equal(sensor.crf.raw, 0.0)
        assert all(f.delta_t == 0.0 for f in result.params.frames.values())

    def test_deterministic(self, tiny_dataset):
        config = _config(iterations=8, batch_size=2)
        a = calibrate(Dataset(tiny_dataset), config)
        b = calibrate(Dataset(tiny_dataset), config)
        pd.testing.assert_frame_equal(a.trace, b.trace)
        np.testing.assert_array_equal(a.params.sensors['cam0'].crf.raw,
                                      b.params.sensors['cam0'].crf.raw)

    def test_unbatched_frames_keep_their_values(self, tiny_dataset):
        """With batch size 1 and one iteration only one frame moves."""
        result = calibrate(Dataset(tiny_dataset), _config(iterations=1, batch_size=1))
        moved = [fid for fid, f in result.params.frames.items()
                 if f.delta_t != 0.0 or np.any(f.theta != 0.0)]
        assert len(moved) == 1

    def test_write_trace(self, tiny_dataset, tmp_path):
        result = calibrate(Dataset(tiny_dataset), _config(iterations=3))
        path = result.write_trace(tmp_path / 'out' / 'trace.csv')
        assert list(pd.read_csv(path).columns) == TRACE_COLUMNS

    def test_rerun_writes_identical_params_file(self, tiny_dataset, tmp_path):
        config = _config(iterations=8, batch_size=2)
        first = save_params(calibrate(Dataset(tiny_dataset), config).params,
                            tmp_path / 'a' / 'params.json')
        second = save_params(calibrate(Dataset(tiny_dataset), config).params,
                             tmp_path / 'b' / 'params.json')
        assert first.read_bytes() == second.read_bytes()

    def test_photometric_weight_scales_total(self, tiny_dataset):
        result = calibrate(Dataset(tiny_dataset), _config(iterations=5, photometric_weight=50.0))
        trace = result.trace
        reg = trace['exposure'] + trace['color'] + trace['variance'] + trace['vignetting']
        np.testing.assert_allclose(trace['total'], 50.0 * trace['photometric'] + reg,
                                   rtol=1e-12)


class TestCalibrateRecovery:
    """Test that calibration recovers a known sensor on captures whose truth is the loss minimum."""

    def test_auto_exposure_offsets(self, tmp_path):
        ae = [simulate_ae(gen_radiance(RECOVERY_SCENE, i), jitter=0.0)
              for i in range(RECOVERY_FRAMES)]
        evs = np.array(ae) - np.mean(ae)
        truth = _write_capture_set(tmp_path / 'ae', SensorParams.identity(), evs)

        result = calibrate(Dataset(tmp_path / 'ae'), _recovery_config())
        ids = sorted(truth.frames)
        fit = exposure_identifiability([result.params.frames[f].delta_t for f in ids],
                                       [truth.frames[f].delta_t for f in ids])
        assert fit.residual_std <= 0.02
        assert fit.r >= 0.999

    def test_shared_vignetting(self, tmp_path):
        alpha = np.tile([-0.3, -0.1, 0.0], (3, 1))
        sensor = SensorParams(vignetting=VignettingParams(mu=np.zeros((3, 2)), alpha=alpha),
                              crf=CrfParams.identity())
        _write_capture_set(tmp_path / 'vig', sensor, np.linspace(-0.6, 0.6, RECOVERY_FRAMES))

        result = calibrate(Dataset(tmp_path / 'vig'), _recovery_config())
        recovered = result.params.sensors['cam0'].vignetting
        rmse = curve_rmse(vignetting_curve(recovered), vignetting_curve(sensor.vignetting))
        assert np.all(rmse <= 0.01)
        photometric = result.trace['photometric']
        assert photometric.iloc[-1] < 0.1 * photometric.iloc[0]


class TestCalibrateErrors:
    """Test calibrate failure modes."""

    def test_missing_radiance(self, tiny_dataset):
        for path in (tiny_dataset / 'radiance').iterdir():
            path.unlink()
        (tiny_dataset / 'radiance').rmdir()
        with pytest.raises(DatasetError):
            calibrate(Dataset(tiny_dataset), _config())

    def test_sensor_with_one_frame(self, tmp_path):
        root = synthesize(tmp_path / 'd', SynthConfig(seed=1, frames=3, width=16, height=16,
                                                      sensors=2), threads=1)
        with pytest.raises(DatasetError) as excinfo:
            calibrate(Dataset(root), _config())
        assert 'cam1' in str(excinfo.value)

    def test_non_finite_loss(self, tiny_dataset):
        with patch('ppisp.calib.calibrate.photometric_loss') as mock_loss:
            mock_loss.return_value = (float('nan'), np.zeros((18, 24, 3)))
            with pytest.raises(NumericalFailure) as excinfo:
                calibrate(Dataset(tiny_dataset), _config())
        assert excinfo.value.iteration == 0
        assert excinfo.value.block.startswith('frame/')
