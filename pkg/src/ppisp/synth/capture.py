# src/ppisp/synth/capture.py
"""Simulated captures through a known sensor, and dataset generation.

truth.json holds the ground-truth sensor and frame parameters. It is
written next to the dataset but is not part of the manifest, and only
``load_truth`` reads it.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ppisp.config import SynthConfig, resolve_threads
from ppisp.core.image import ImageBuffer, ImageLike
from ppisp.core.image_io import save_pfm, save_png8
from ppisp.dataset import FrameRecord, split_for_index, write_manifest
from ppisp.errors import DatasetError
from ppisp.isp.params import CrfParams, FrameParams, SensorParams, VignettingParams
from ppisp.isp.pipeline import pipeline_forward
from ppisp.isp.precondition import PreconditionBlocks, default_blocks
from ppisp.isp.serialize import ParamSet, dumps, params_from_dict, params_to_dict
from ppisp.synth.scene import STREAM_CAPTURE, SceneSpec, gen_radiance, stream
from ppisp.synth.script import (
    CaptureScript,
    FrameScript,
    build_script,
    simulate_ae,
    white_offsets,
    white_point_track,
)

logger = logging.getLogger(__name__)

TRUTH_FILE = 'truth.json'


def default_truth_sensor(variant: int = 0) -> SensorParams:
    """
    Ground-truth sensor used by the simulator.

    Variant 0 is the reference camera; higher variants stretch its
    falloff and tone curve so multi-sensor datasets have distinct sensors.
    """
    stretch = 1.0 + 0.15 * variant
    alpha = np.array([
        [-0.30, -0.05, 0.0],
        [-0.25, -0.05, 0.0],
        [-0.35, -0.05, 0.0],
    ]) * stretch
    crf = CrfParams.from_materialized(
        tau=1.4 + 0.1 * variant, eta=1.6, xi=0.45, gamma=1.0 / 2.2)
    return SensorParams(vignetting=VignettingParams(mu=np.zeros((3, 2)), alpha=alpha), crf=crf)


@dataclass
class CapturedFrame:
    record: FrameRecord
    radiance: ImageBuffer
    observed: ImageBuffer
    params: FrameParams


def simulate_capture(radiance: ImageLike, sensor: SensorParams, frame: FrameScript,
                     white=(0.0, 0.0), rng: Optional[np.random.Generator] = None,
                     blocks: Optional[PreconditionBlocks] = None
                     ) -> Tuple[ImageBuffer, FrameParams]:
    """
    Capture one frame through a known sensor.

    The exposure offset comes from AE or the manual EV, plus the bracket;
    the white-point offset comes from the white-balance track.

    Args:
        radiance: Linear scene radiance
        sensor: Ground-truth sensor
        frame: Capture settings
        white: White-point chromaticity offset (2,)
        rng: Stream for AE jitter and sensor noise
        blocks: Preconditioning blocks for the stored frame parameters

    Returns:
        (observed image in [0, 1], ground-truth FrameParams)
    """
    blocks = blocks or default_blocks()
    rng = rng if rng is not None else np.random.default_rng()
    if frame.ae_enabled:
        delta_t = simulate_ae(radiance, frame.ae_jitter, rng)
    else:
        delta_t = float(frame.manual_ev)
    delta_t += frame.bracket

    params = FrameParams.from_offsets(delta_t, white_offsets(white), blocks)
    image = pipeline_forward(radiance, sensor, params, blocks)
    if frame.noise_sigma > 0:
        image = image + rng.normal(0.0, frame.noise_sigma, image.shape)
    return ImageBuffer(np.clip(image, 0.0, 1.0)), params


def write_dataset(path, frames: List[CapturedFrame], truth: ParamSet,
                  extra_meta: Optional[dict] = None) -> Path:
    """
    Write a dataset directory: radiance and observed PFMs, PNG previews,
    meta.json and the sealed truth.json.

    Raises:
        DatasetError: any file could not be written
    """
    root = Path(path)
    try:
        for frame in frames:
            fid = frame.record.frame_id
            save_pfm(frame.radiance, root / 'radiance' / f"{fid}.pfm")
            save_pfm(frame.observed, root / 'images' / f"{fid}.pfm")
            save_png8(frame.observed, root / 'images' / f"{fid}.png")
        truth_doc = params_to_dict(truth)
        truth_doc['sealed'] = True
        (root / TRUTH_FILE).write_text(dumps(truth_doc))
    except OSError as e:
        raise DatasetError(f"cannot write dataset to {root}: {e}") from e
    write_manifest(root, [f.record for f in frames], extra_meta)
    logger.info(f"Wrote {len(frames)} frames to {root}")
    return root


def load_truth(path) -> ParamSet:
    """Ground truth of a generated dataset (evaluation only)."""
    truth_path = Path(path) / TRUTH_FILE
    try:
        doc = json.loads(truth_path.read_text())
    except OSError as e:
        raise DatasetError(f"cannot read {truth_path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"invalid JSON in {truth_path}: {e}") from e
    return params_from_dict(doc)


def generate_dataset(config: SynthConfig, threads: int = 0,
                     blocks: Optional[PreconditionBlocks] = None
                     ) -> Tuple[List[CapturedFrame], ParamSet, CaptureScript]:
    """
    Generate every frame of a synthetic dataset.

    Radiance and captures are computed in a thread pool; each frame draws
    from its own random streams, so the result does not depend on the
    number of workers.
    """
    blocks = blocks or default_blocks()
    scene = SceneSpec(seed=config.seed, width=config.width, height=config.height,
                      max_radiance=config.max_radiance)
    script = build_script(config.preset, config.frames, seed=config.seed,
                          sensors=config.sensors, ae_jitter=config.ae_jitter,
                          noise_sigma=config.noise_sigma, awb_sigma=config.awb_sigma,
                          awb_mode=config.awb_mode)
    sensors: Dict[str, SensorParams] = {
        f"cam{k}": default_truth_sensor(k) for k in range(config.sensors)
    }
    workers = resolve_threads(threads)
    logger.info(f"Generating {config.frames} frames ({config.width}x{config.height}, "
                f"preset {config.preset}) with {workers} worker(s)")

    with ThreadPoolExecutor(max_workers=workers) as pool:
        radiances = list(pool.map(lambda f: gen_radiance(scene, f.index), script.frames))
        whites = white_point_track(script, config.seed, radiances)

        def capture(item):
            frame, radiance, white = item
            rng = stream(config.seed, STREAM_CAPTURE, frame.index)
            return simulate_capture(radiance, sensors[frame.sensor_id], frame, white, rng, blocks)

        captures = list(pool.map(capture, zip(script.frames, radiances, whites)))

    truth = ParamSet(sensors=sensors, blocks=blocks)
    frames = []
    for frame, radiance, (observed, params) in zip(script.frames, radiances, captures):
        record = FrameRecord(frame_id=frame.frame_id, sensor_id=frame.sensor_id,
                             split=split_for_index(frame.index), ev=frame.ev)
        frames.append(CapturedFrame(record=record, radiance=radiance, observed=observed,
                                    params=params))
        truth.frames[frame.frame_id] = params
        truth.frame_sensors[frame.frame_id] = frame.sensor_id
    return frames, truth, script


def synthesize(path, config: SynthConfig, threads: int = 0) -> Path:
    """Generate and write a dataset; returns its directory."""
    frames, truth, script = generate_dataset(config, threads)
    extra = {
        'generator': {
            'seed': config.seed,
            'preset': config.preset,
            'width': config.width,
            'height': config.height,
            'awb_mode': script.awb_mode,
        },
    }
    return write_dataset(path, frames, truth, extra)
