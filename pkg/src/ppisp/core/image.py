# src/ppisp/core/image.py
"""Image buffers and the RGB <-> RGI color-space conversion.

RGI keeps the red and green values and replaces blue by the intensity
R+G+B. The color-correction homography acts projectively in this space.
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from ppisp.errors import ImageError

# Third row (1, 1, 1) makes [C x]_3 the unweighted channel sum.
RGB_TO_RGI = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [1.0, 1.0, 1.0],
])
RGI_TO_RGB = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [-1.0, -1.0, 1.0],
])


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """H x W x 3 linear float image.

    Radiance is unbounded above; display images live in [0, 1]. The
    array is copied and made read-only on construction.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageError(f"expected an H x W x 3 array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageError(f"image must be at least 1x1, got {arr.shape[0]}x{arr.shape[1]}")
        if not np.all(np.isfinite(arr)):
            raise ImageError("image contains NaN or Inf")
        if np.any(arr < 0):
            raise ImageError("image contains negative values")
        arr.setflags(write=False)
        object.__setattr__(self, 'data', arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @classmethod
    def uniform(cls, height: int, width: int, value) -> 'ImageBuffer':
        """Constant image; value is a scalar or an RGB triple."""
        data = np.empty((height, width, 3))
        data[...] = np.asarray(value, dtype=np.float64)
        return cls(data)

    def clipped(self, low: float = 0.0, high: float = 1.0) -> 'ImageBuffer':
        return ImageBuffer(np.clip(self.data, low, high))


ImageLike = Union[ImageBuffer, np.ndarray]


def as_array(image: ImageLike) -> np.ndarray:
    """Return the float64 H x W x 3 array behind an image-like value."""
    if isinstance(image, ImageBuffer):
        return image.data
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ImageError(f"expected an H x W x 3 array, got shape {arr.shape}")
    return arr


def rgb_to_rgi(color) -> np.ndarray:
    """Convert RGB to RGI along the last axis."""
    return np.asarray(color, dtype=np.float64) @ RGB_TO_RGI.T


def rgi_to_rgb(rgi) -> np.ndarray:
    """Inverse of rgb_to_rgi."""
    return np.asarray(rgi, dtype=np.float64) @ RGI_TO_RGB.T


def mean_luminance(image: ImageLike) -> float:
    """Mean over pixels of (R + G + B) / 3.

    numpy reduces contiguous float arrays with pairwise summation, so the
    result does not depend on how callers parallelize around it.
    """
    data = np.ascontiguousarray(as_array(image))
    per_pixel = data.sum(axis=2) / 3.0
    return float(per_pixel.reshape(-1).sum() / per_pixel.size)
