# tests/test_synth.py
"""Tests for the synthetic scene, capture scripts and dataset generation."""

import json

import numpy as np
import pytest

from ppisp.config import SynthConfig
from ppisp.core.image import ImageBuffer, mean_luminance
from ppisp.dataset import Dataset
from ppisp.errors import ImageError
from ppisp.isp.exposure import apply_exposure
from ppisp.isp.params import SensorParams
from ppisp.isp.pipeline import pipeline_forward
from ppisp.synth.capture import (
    TRUTH_FILE,
    default_truth_sensor,
    generate_dataset,
    load_truth,
    simulate_capture,
    synthesize,
)
from ppisp.synth.scene import SceneSpec, gen_radiance, stream
from ppisp.synth.script import (
    AWB_LIMIT,
    FrameScript,
    build_script,
    content_awb,
    simulate_ae,
    simulate_awb,
    white_point_track,
)


class TestScene:
    """Test procedural radiance generation."""

    def test_deterministic(self):
        scene = SceneSpec(seed=11, width=40, height=30)
        a = gen_radiance(scene, 3)
        b = gen_radiance(scene, 3)
        np.testing.assert_array_equal(a.data, b.data)

    def test_frames_differ(self):
        scene = SceneSpec(seed=11, width=40, height=30)
        assert not np.array_equal(gen_radiance(scene, 0).data, gen_radiance(scene, 1).data)

    def test_illumination_scales_luminance(self):
        scene = SceneSpec(seed=2, width=40, height=30)
        dim = gen_radiance(scene, 0, illumination=1.0)
        bright = gen_radiance(scene, 0, illumination=2.0)
        assert mean_luminance(bright) / mean_luminance(dim) == pytest.approx(2.0, rel=1e-6)

    def test_value_range(self):
        """Radiance stays in [0, 4] with a mid-gray typical mean across seeds."""
        means = []
        for seed in range(20):
            image = gen_radiance(SceneSpec(seed=seed, width=48, height=32), seed)
            assert image.data.min() >= 0.0
            assert image.data.max() <= 4.0 + 1e-12
            means.append(mean_luminance(image))
        assert 0.05 <= np.median(means) <= 1.0

    def test_streams_independent_of_order(self):
        first = stream(5, 1, 7).random(3)
        stream(5, 1, 6).random(3)
        np.testing.assert_array_equal(stream(5, 1, 7).random(3), first)


class TestAutoExposure:
    """Test the 18% gray auto-exposure rule."""

    def test_fixed_point(self):
        assert simulate_ae(ImageBuffer.uniform(4, 4, 0.18), jitter=0.0) == pytest.approx(0.0,
                                                                                       abs=1e-12)

    def test_two_stops_under(self):
        assert simulate_ae(ImageBuffer.uniform(4, 4, 0.045), jitter=0.0) == pytest.approx(2.0)

    def test_two_stops_over(self):
        assert simulate_ae(ImageBuffer.uniform(4, 4, 0.72), jitter=0.0) == pytest.approx(-2.0)

    def test_clamped(self):
        assert simulate_ae(ImageBuffer.uniform(2, 2, 1e-6), jitter=0.0) == 5.0

    def test_black_rejected(self):
        with pytest.raises(ImageError):
            simulate_ae(ImageBuffer.uniform(2, 2, 0.0), jitter=0.0)

    def test_inversion(self):
        """Applying the AE offset brings a uniform image to 18% gray."""
        for value in (0.02, 0.1, 0.5, 1.3):
            image = ImageBuffer.uniform(3, 3, value)
            exposed = apply_exposure(image, simulate_ae(image, jitter=0.0))
            assert mean_luminance(exposed) == pytest.approx(0.18, abs=1e-6)

    def test_jitter(self):
        rng = np.random.default_rng(0)
        offsets = [simulate_ae(ImageBuffer.uniform(2, 2, 0.18), 0.05, rng) for _ in range(500)]
        assert np.std(offsets) == pytest.approx(0.05, rel=0.2)


class TestWhiteBalance:
    """Test the white-point random walk and the content-coupled mode."""

    def test_zero_sigma_stays_put(self):
        rng = np.random.default_rng(0)
        state = np.zeros(2)
        for _ in range(100):
            offsets, state = simulate_awb(state, 0.0, rng)
        np.testing.assert_array_equal(state, 0.0)
        np.testing.assert_array_equal(offsets, 0.0)

    def test_bounded(self):
        rng = np.random.default_rng(1)
        state = np.zeros(2)
        for _ in range(2000):
            offsets, state = simulate_awb(state, 0.02, rng)
            assert np.all(np.abs(offsets) <= AWB_LIMIT)
            np.testing.assert_array_equal(offsets[:3], 0.0)

    def test_step_size(self):
        """Unclamped increments have the configured standard deviation."""
        increments = []
        for seed in range(50):
            rng = np.random.default_rng(seed)
            state = np.zeros(2)
            for _ in range(20):
                _, nxt = simulate_awb(state, 0.01, rng)
                free = np.abs(nxt) < AWB_LIMIT
                increments.extend((nxt - state)[free])
                state = nxt
        assert np.std(increments) == pytest.approx(0.01, rel=0.2)

    def test_content_mode_counteracts_cast(self):
        """A reddish scene gets a white offset pointing away from red."""
        image = ImageBuffer.uniform(4, 4, (0.5, 0.3, 0.3))
        white = content_awb(image)
        assert white[0] < 0
        assert white[1] > 0

    def test_track_off_for_ae_only(self):
        script = build_script('ae-only', 5)
        assert script.awb_mode == 'off'
        for white in white_point_track(script, seed=0):
            np.testing.assert_array_equal(white, 0.0)

    def test_content_track_needs_radiance(self):
        script = build_script('ae-awb', 3, awb_mode='content')
        with pytest.raises(ValueError):
            white_point_track(script, seed=0)


class TestScripts:
    """Test capture presets."""

    def test_bracketing_cycle(self):
        script = build_script('bracketing', 6)
        assert [f.bracket for f in script.frames] == [-2.0, 0.0, 2.0, -2.0, 0.0, 2.0]
        assert all(f.ev is not None for f in script.frames)

    def test_manual_range(self):
        script = build_script('manual', 20, seed=4)
        evs = [f.manual_ev for f in script.frames]
        assert all(-2.0 <= ev <= 2.0 for ev in evs)
        assert [f.ev for f in script.frames] == evs

    def test_sensors_round_robin(self):
        script = build_script('ae-awb', 5, sensors=2)
        assert [f.sensor_id for f in script.frames] == ['cam0', 'cam1', 'cam0', 'cam1', 'cam0']

    def test_unknown_preset(self):
        with pytest.raises(ValueError):
            build_script('hdr', 3)

    def test_frame_needs_one_exposure_source(self):
        with pytest.raises(ValueError):
            FrameScript(index=0, ae_enabled=True, manual_ev=1.0)


class TestSimulateCapture:
    """Test single-frame capture."""

    def test_identity_sensor(self, rng):
        radiance = ImageBuffer(rng.uniform(0.0, 1.5, (6, 8, 3)))
        frame = FrameScript(index=0, ae_enabled=False, manual_ev=0.0)
        observed, params = simulate_capture(radiance, SensorParams.identity(), frame)
        np.testing.assert_allclose(observed.data, np.clip(radiance.data, 0.0, 1.0), atol=1e-6)
        assert params.delta_t == 0.0

    def test_bracket_ratio(self, rng):
        """Below saturation a +2 stop bracket multiplies pixel values by 4."""
        radiance = ImageBuffer(rng.uniform(0.01, 0.2, (6, 8, 3)))
        base = FrameScript(index=0, ae_enabled=False, manual_ev=0.0)
        up = FrameScript(index=0, ae_enabled=False, manual_ev=0.0, bracket=2.0)
        low, _ = simulate_capture(radiance, SensorParams.identity(), base)
        high, params = simulate_capture(radiance, SensorParams.identity(), up)
        assert params.delta_t == 2.0
        mask = radiance.data < 0.25
        np.testing.assert_allclose(high.data[mask] / low.data[mask], 4.0, rtol=1e-6)

    def test_delegates_to_pipeline(self, radiance):
        sensor = default_truth_sensor()
        frame = FrameScript(index=0, ae_jitter=0.0)
        observed, params = simulate_capture(radiance, sensor, frame, white=(0.01, -0.02))
        np.testing.assert_array_equal(observed.data, pipeline_forward(radiance, sensor, params))
        np.testing.assert_allclose(params.color_offsets()[3], [0.01, -0.02], atol=1e-12)


class TestGenerateDataset:
    """Test whole-dataset generation."""

    def test_split_sixteen_frames(self):
        frames, _, _ = generate_dataset(SynthConfig(seed=7, frames=16, width=16, height=12))
        splits = [f.record.split for f in frames]
        assert splits.count('train') == 14
        assert splits.count('test') == 2

    def test_deterministic_across_workers(self):
        config = SynthConfig(seed=5, frames=6, width=20, height=14)
        a, _, _ = generate_dataset(config, threads=1)
        b, _, _ = generate_dataset(config, threads=4)
        for fa, fb in zip(a, b):
            np.testing.assert_array_equal(fa.observed.data, fb.observed.data)
            np.testing.assert_array_equal(fa.radiance.data, fb.radiance.data)

    def test_truth_replays_observed(self):
        """Without noise the recorded ground truth reproduces every observed image."""
        config = SynthConfig(seed=9, frames=5, width=20, height=14, sensors=2)
        frames, truth, _ = generate_dataset(config, threads=1)
        for frame in frames:
            fid = frame.record.frame_id
            replay = pipeline_forward(frame.radiance, truth.sensor_for(fid), truth.frames[fid],
                                      truth.blocks)
            np.testing.assert_array_equal(replay, frame.observed.data)

    def test_noise_changes_images(self):
        clean, _, _ = generate_dataset(SynthConfig(seed=1, frames=2, width=12, height=10))
        noisy, _, _ = generate_dataset(SynthConfig(seed=1, frames=2, width=12, height=10,
                                                   noise_sigma=0.01))
        assert not np.array_equal(clean[0].observed.data, noisy[0].observed.data)
        assert noisy[0].observed.data.min() >= 0.0
        assert noisy[0].observed.data.max() <= 1.0


class TestSynthesize:
    """Test the written dataset directory."""

    def test_layout(self, tiny_dataset):
        assert (tiny_dataset / 'meta.json').exists()
        assert (tiny_dataset / TRUTH_FILE).exists()
        for fid in ('0000', '0007'):
            assert (tiny_dataset / 'radiance' / f"{fid}.pfm").exists()
            assert (tiny_dataset / 'images' / f"{fid}.pfm").exists()
            assert (tiny_dataset / 'images' / f"{fid}.png").exists()

    def test_manifest_has_no_truth(self, tiny_dataset):
        meta = json.loads((tiny_dataset / 'meta.json').read_text())
        assert meta['schema'] == 'ppisp-dataset/1'
        assert 'sensors' not in meta
        assert 'truth' not in json.dumps(meta)
        for record in meta['frames']:
            assert set(record) == {'id', 'sensor', 'split', 'ev'}

    def test_bracketing_records_ev(self, tmp_path):
        root = synthesize(tmp_path / 'bracket',
                          SynthConfig(seed=2, frames=3, width=12, height=10, preset='bracketing'))
        evs = [r.ev for r in Dataset(root).frames]
        assert evs == [-2.0, 0.0, 2.0]

    def test_truth_round_trip(self, tiny_dataset, tiny_synth_config):
        _, truth, _ = generate_dataset(tiny_synth_config, threads=1)
        loaded = load_truth(tiny_dataset)
        assert set(loaded.frames) == set(truth.frames)
        for fid, frame in truth.frames.items():
            assert loaded.frames[fid].delta_t == frame.delta_t
            np.testing.assert_array_equal(loaded.frames[fid].theta, frame.theta)
        np.testing.assert_array_equal(loaded.sensors['cam0'].crf.raw, truth.sensors['cam0'].crf.raw)
