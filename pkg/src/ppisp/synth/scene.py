# src/ppisp/synth/scene.py
"""Procedural HDR radiance scenes.

A scene is a fixed reflectance world (multi-octave value noise plus a few
flat discs and small highlight discs) seen through a camera that pans a
few pixels per frame, lit by a per-frame illumination level and
illuminant tint.

Random streams are keyed by (seed, stream tag, index), so any frame can be
generated independently of the others.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np

from ppisp.core.image import ImageBuffer

logger = logging.getLogger(__name__)

# Stream tags for np.random.default_rng([seed, tag, index]).
STREAM_SCENE = 0
STREAM_FRAME = 1
STREAM_SCRIPT = 2
STREAM_CAPTURE = 3
STREAM_AWB = 4

LATTICE_SIZE = 16
REFLECTANCE_SCALE = 0.8


def stream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(tag), int(index)])


@dataclass(frozen=True)
class SceneSpec:
    """Scene generator settings."""

    seed: int = 0
    width: int = 192
    height: int = 128
    max_radiance: float = 4.0           # Brightest value at the brightest illumination
    octaves: int = 4
    pan: Tuple[float, float] = (3.0, 1.0)     # Camera motion per frame, pixels (x, y)
    discs: int = 6
    highlights: int = 2
    illumination_stops: Tuple[float, float] = (-1.5, 0.5)
    tint_sigma: float = 0.1             # Log-normal spread of the illuminant tint

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("scene width and height must be >= 1")
        if self.max_radiance <= 0:
            raise ValueError("max_radiance must be positive")
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")

    @property
    def radiance_scale(self) -> float:
        """Scale so reflectance 1 at the top illumination level equals max_radiance."""
        return self.max_radiance / 2.0 ** self.illumination_stops[1]


@dataclass(frozen=True)
class _World:
    lattices: np.ndarray        # channels x octaves x N x N, values in [0, 1]
    disc_centers: np.ndarray    # D x 2 world coordinates (x, y)
    disc_radii: np.ndarray      # D
    disc_colors: np.ndarray     # D x 3 reflectance


@lru_cache(maxsize=4)
def _world(scene: SceneSpec) -> _World:
    rng = stream(scene.seed, STREAM_SCENE)
    lattices = rng.random((3, scene.octaves, LATTICE_SIZE, LATTICE_SIZE))
    extent = np.array([2.0 * scene.width, 2.0 * scene.height])
    size = float(min(scene.width, scene.height))

    n = scene.discs + scene.highlights
    centers = rng.random((n, 2)) * extent
    radii = np.concatenate([
        rng.uniform(0.05, 0.15, scene.discs) * size,
        rng.uniform(0.02, 0.05, scene.highlights) * size,
    ])
    colors = np.concatenate([
        rng.uniform(0.1, 0.9, (scene.discs, 3)) * REFLECTANCE_SCALE,
        np.ones((scene.highlights, 3)),
    ])
    return _World(lattices=lattices, disc_centers=centers, disc_radii=radii, disc_colors=colors)


def _smoothstep(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


def _value_noise(lattice: np.ndarray, x: np.ndarray, y: np.ndarray, cell: float) -> np.ndarray:
    """Periodic value noise sampled at world coordinates."""
    n = lattice.shape[0]
    gx, gy = x / cell, y / cell
    x0, y0 = np.floor(gx), np.floor(gy)
    sx, sy = _smoothstep(gx - x0), _smoothstep(gy - y0)
    i0 = x0.astype(np.int64) % n
    j0 = y0.astype(np.int64) % n
    i1, j1 = (i0 + 1) % n, (j0 + 1) % n
    top = lattice[j0, i0] * (1.0 - sx) + lattice[j0, i1] * sx
    bottom = lattice[j1, i0] * (1.0 - sx) + lattice[j1, i1] * sx
    return top * (1.0 - sy) + bottom * sy


def frame_origin(scene: SceneSpec, frame_index: int) -> Tuple[float, float]:
    return frame_index * scene.pan[0], frame_index * scene.pan[1]


def illumination_for(scene: SceneSpec, frame_index: int) -> float:
    """Scripted global illumination multiplier, 2^u with u uniform in illumination_stops."""
    lo, hi = scene.illumination_stops
    rng = stream(scene.seed, STREAM_FRAME, frame_index)
    return float(2.0 ** rng.uniform(lo, hi))


def tint_for(scene: SceneSpec, frame_index: int) -> np.ndarray:
    """Per-frame illuminant tint; the strongest channel is 1."""
    rng = stream(scene.seed, STREAM_FRAME, frame_index)
    rng.uniform()   # skip the illumination draw
    tint = np.exp(rng.normal(0.0, scene.tint_sigma, 3))
    return tint / tint.max()


def reflectance(scene: SceneSpec, frame_index: int) -> np.ndarray:
    """H x W x 3 reflectance in [0, 1] seen at this frame's camera position."""
    world = _world(scene)
    ox, oy = frame_origin(scene, frame_index)
    ys, xs = np.mgrid[0:scene.height, 0:scene.width].astype(np.float64)
    x, y = xs + ox, ys + oy

    base_cell = max(scene.width, scene.height) / 2.0
    weights = 0.5 ** np.arange(scene.octaves)
    refl = np.empty((scene.height, scene.width, 3))
    for c in range(3):
        field = np.zeros_like(x)
        for o in range(scene.octaves):
            field += weights[o] * _value_noise(world.lattices[c, o], x, y, base_cell / 2 ** o)
        b = field / weights.sum()
        refl[..., c] = REFLECTANCE_SCALE * b * b

    for center, radius, color in zip(world.disc_centers, world.disc_radii, world.disc_colors):
        inside = (x - center[0]) ** 2 + (y - center[1]) ** 2 <= radius * radius
        refl[inside] = color
    return refl


def gen_radiance(scene: SceneSpec, frame_index: int,
                 illumination: Optional[float] = None) -> ImageBuffer:
    """
    Linear radiance for one frame.

    Args:
        scene: Scene settings
        frame_index: Frame number; selects camera position, illumination and tint
        illumination: Override for the scripted illumination multiplier

    Returns:
        ImageBuffer with values in [0, max_radiance]
    """
    level = illumination_for(scene, frame_index) if illumination is None else float(illumination)
    radiance = reflectance(scene, frame_index) * tint_for(scene, frame_index)
    radiance *= scene.radiance_scale * level
    logger.debug(f"frame {frame_index}: illumination {level:.3f}")
    return ImageBuffer(radiance)
