# src/ppisp/synth/script.py
"""Capture scripts: how each simulated frame is exposed and white balanced.

Exposure is set either by a mean-luminance auto-exposure loop targeting
18% gray or by a manual EV, optionally offset by a bracketing step. White
balance drifts as a bounded random walk of the white-point chromaticity
offset, or follows the scene illuminant (content-coupled mode).
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ppisp.core.image import ImageLike, as_array, mean_luminance
from ppisp.errors import ImageError
from ppisp.synth.scene import STREAM_AWB, STREAM_SCRIPT, stream

logger = logging.getLogger(__name__)

AE_TARGET = 0.18
AE_LIMIT = 5.0
AWB_LIMIT = 0.05
AWB_CONTENT_GAIN = 0.5
BRACKET_STEPS = (-2.0, 0.0, 2.0)
MANUAL_EV_RANGE = (-2.0, 2.0)
NEUTRAL_CHROMATICITY = np.array([1.0 / 3.0, 1.0 / 3.0])


@dataclass(frozen=True)
class FrameScript:
    """Capture settings of one frame."""

    index: int
    sensor_id: str = 'cam0'
    ae_enabled: bool = True
    manual_ev: Optional[float] = None   # Exposure offset when AE is off
    bracket: float = 0.0                # Added to the exposure offset, stops
    ae_jitter: float = 0.05             # AE jitter, stops
    noise_sigma: float = 0.0
    expose_ev: bool = False             # Record the relative exposure as metadata

    def __post_init__(self):
        if self.ae_enabled == (self.manual_ev is not None):
            raise ValueError("exactly one of AE and a manual EV must govern exposure")

    @property
    def frame_id(self) -> str:
        return f"{self.index:04d}"

    @property
    def ev(self) -> Optional[float]:
        """Relative exposure metadata (manual EV plus bracket), if recorded."""
        if not self.expose_ev:
            return None
        return (self.manual_ev or 0.0) + self.bracket


@dataclass(frozen=True)
class CaptureScript:
    preset: str
    frames: List[FrameScript] = field(default_factory=list)
    awb_sigma: float = 0.01
    awb_mode: str = 'random-walk'       # 'random-walk', 'content' or 'off'


def simulate_ae(radiance: ImageLike, jitter: float = 0.05,
                rng: Optional[np.random.Generator] = None) -> float:
    """
    Auto-exposure offset that brings the mean luminance to 18% gray.

    Returns:
        -log2(mean / 0.18) clamped to [-5, 5], plus N(0, jitter^2)

    Raises:
        ImageError: the image has zero mean luminance
    """
    mean = mean_luminance(radiance)
    if mean <= 0:
        raise ImageError("auto exposure needs an image with positive mean luminance")
    delta_t = float(np.clip(-np.log2(mean / AE_TARGET), -AE_LIMIT, AE_LIMIT))
    if jitter > 0:
        rng = rng if rng is not None else np.random.default_rng()
        delta_t += float(rng.normal(0.0, jitter))
    return delta_t


def simulate_awb(state, sigma: float,
                 rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    One random-walk step of the white-point offset.

    Args:
        state: Current white-point offset (2,)
        sigma: Step standard deviation per component
        rng: Random stream

    Returns:
        (4 x 2 offsets with zero primaries, next state)
    """
    state = np.asarray(state, dtype=np.float64)
    step = rng.normal(0.0, sigma, 2) if sigma > 0 else np.zeros(2)
    nxt = np.clip(state + step, -AWB_LIMIT, AWB_LIMIT)
    return white_offsets(nxt), nxt


def gray_world_chromaticity(radiance: ImageLike) -> np.ndarray:
    """(R, G) share of the total channel sum over the image."""
    totals = as_array(radiance).reshape(-1, 3).sum(axis=0)
    return totals[:2] / totals.sum()


def content_awb(radiance: ImageLike, gain: float = AWB_CONTENT_GAIN) -> np.ndarray:
    """White-point offset that counteracts the scene's gray-world cast, (2,)."""
    m = gray_world_chromaticity(radiance)
    return np.clip(-gain * (m - NEUTRAL_CHROMATICITY), -AWB_LIMIT, AWB_LIMIT)


def white_offsets(white) -> np.ndarray:
    offsets = np.zeros((4, 2))
    offsets[3] = white
    return offsets


def build_script(preset: str, frames: int, seed: int = 0, sensors: int = 1,
                 ae_jitter: float = 0.05, noise_sigma: float = 0.0,
                 awb_sigma: float = 0.01, awb_mode: str = 'random-walk') -> CaptureScript:
    """
    Per-frame capture settings for a named preset.

    Presets:
        ae-awb: AE on, white balance drifting
        ae-only: AE on, white balance fixed
        bracketing: AE on with -2/0/+2 stop brackets; EV recorded
        manual: random manual EVs in [-2, 2]; EV recorded
        constant: manual EV 0, white balance fixed
    """
    rng = stream(seed, STREAM_SCRIPT)
    scripts = []
    for i in range(frames):
        common = dict(index=i, sensor_id=f"cam{i % sensors}", ae_jitter=ae_jitter,
                      noise_sigma=noise_sigma)
        if preset in ('ae-awb', 'ae-only'):
            scripts.append(FrameScript(**common))
        elif preset == 'bracketing':
            bracket = BRACKET_STEPS[i % len(BRACKET_STEPS)]
            scripts.append(FrameScript(bracket=bracket, expose_ev=True, **common))
        elif preset == 'manual':
            ev = float(rng.uniform(*MANUAL_EV_RANGE))
            scripts.append(FrameScript(ae_enabled=False, manual_ev=ev, expose_ev=True, **common))
        elif preset == 'constant':
            scripts.append(FrameScript(ae_enabled=False, manual_ev=0.0, **common))
        else:
            raise ValueError(f"unknown preset '{preset}'")

    if preset in ('ae-only', 'constant'):
        awb_mode = 'off'
    return CaptureScript(preset=preset, frames=scripts, awb_sigma=awb_sigma, awb_mode=awb_mode)


def white_point_track(script: CaptureScript, seed: int, radiances=None) -> List[np.ndarray]:
    """
    White-point offsets (2,) for every frame of a script, in frame order.

    The content mode needs the frames' radiance images.
    """
    if script.awb_mode == 'off':
        return [np.zeros(2) for _ in script.frames]
    if script.awb_mode == 'content':
        if radiances is None:
            raise ValueError("content-coupled white balance needs the radiance images")
        return [content_awb(r) for r in radiances]
    if script.awb_mode != 'random-walk':
        raise ValueError(f"unknown awb mode '{script.awb_mode}'")

    rng = stream(seed, STREAM_AWB)
    state = np.zeros(2)
    track = []
    for _ in script.frames:
        track.append(state)
        _, state = simulate_awb(state, script.awb_sigma, rng)
    return track
