# src/ppisp/isp/pipeline.py
"""Forward ISP: exposure -> vignetting -> color correction -> CRF."""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ppisp.core.image import ImageLike, as_array
from ppisp.isp.color import apply_color_correction, build_homography
from ppisp.isp.crf import apply_crf
from ppisp.isp.exposure import apply_exposure
from ppisp.isp.params import FrameParams, SensorParams
from ppisp.isp.precondition import PreconditionBlocks, default_blocks
from ppisp.isp.vignetting import vignetting_field

logger = logging.getLogger(__name__)


@dataclass
class PipelineTrace:
    """Every intermediate of one forward pass; the backward pass reuses them."""

    radiance: np.ndarray
    exposed: np.ndarray         # L * 2^dt
    vignette: np.ndarray        # clipped attenuation per channel
    vignetted: np.ndarray
    homography: np.ndarray
    corrected: np.ndarray       # CRF input, before the [0, 1] clamp
    output: np.ndarray


def run_pipeline(radiance: ImageLike, sensor: SensorParams, frame: FrameParams,
                 blocks: Optional[PreconditionBlocks] = None) -> PipelineTrace:
    """
    Run the four operators and keep the intermediates.

    Raises:
        DegenerateHomographyError: the frame's color offsets are degenerate
    """
    blocks = blocks or default_blocks()
    L = as_array(radiance)
    exposed = apply_exposure(L, frame.delta_t)
    vignette = vignetting_field(L.shape[0], L.shape[1], sensor.vignetting)
    vignetted = exposed * vignette
    H = build_homography(frame.color_offsets(blocks))
    corrected = apply_color_correction(vignetted, H)
    output = apply_crf(corrected, sensor.crf)
    return PipelineTrace(
        radiance=L,
        exposed=exposed,
        vignette=vignette,
        vignetted=vignetted,
        homography=H,
        corrected=corrected,
        output=output,
    )


def pipeline_forward(radiance: ImageLike, sensor: SensorParams, frame: FrameParams,
                     blocks: Optional[PreconditionBlocks] = None) -> np.ndarray:
    """Render an observed image in [0, 1] from linear radiance."""
    return run_pipeline(radiance, sensor, frame, blocks).output
