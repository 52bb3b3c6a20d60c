import numpy as np
import pytest

from ppisp.config import SynthConfig
from ppisp.core.image import ImageBuffer
from ppisp.isp.params import CrfParams, FrameParams, SensorParams, VignettingParams
from ppisp.synth.capture import synthesize


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(1234)


@pytest.fixture
def radiance(rng):
    """Small interior-valued radiance image (12 x 16)."""
    return ImageBuffer(rng.uniform(0.05, 0.4, (12, 16, 3)))


@pytest.fixture
def smooth_sensor():
    """Non-identity sensor whose falloff stays strictly inside (0, 1) off-center."""
    return SensorParams(
        vignetting=VignettingParams(
            mu=np.array([[0.02, -0.01], [0.0, 0.01], [-0.01, 0.0]]),
            alpha=np.array([[-0.3, -0.05, 0.01], [-0.25, -0.02, 0.0], [-0.2, -0.04, 0.0]]),
        ),
        crf=CrfParams.from_materialized(tau=[1.3, 1.1, 0.9], eta=[1.5, 1.2, 1.0],
                                        xi=[0.45, 0.5, 0.55], gamma=[0.5, 0.6, 0.8]),
    )


@pytest.fixture
def smooth_frame():
    """Frame with a small exposure and color offset."""
    theta = np.array([[0.01, -0.02], [0.015, 0.005], [-0.01, 0.01], [0.02, -0.015]])
    return FrameParams(delta_t=0.3, theta=theta)


@pytest.fixture
def tiny_synth_config():
    """Eight small frames: seven train, one test."""
    return SynthConfig(seed=3, frames=8, width=24, height=18)


@pytest.fixture
def tiny_dataset(tmp_path, tiny_synth_config):
    """A synthesized dataset directory on disk."""
    return synthesize(tmp_path / 'data', tiny_synth_config, threads=1)
