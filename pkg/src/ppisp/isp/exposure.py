# src/ppisp/isp/exposure.py
"""Exposure offset: scale radiance by 2^delta_t (delta_t in stops)."""

import numpy as np

from ppisp.core.image import ImageLike, as_array


def exposure_gain(delta_t: float) -> float:
    return float(np.exp2(delta_t))


def apply_exposure(image: ImageLike, delta_t: float) -> np.ndarray:
    return as_array(image) * exposure_gain(delta_t)
