# src/ppisp/calib/calibrate.py
"""Joint calibration of per-sensor and per-frame ISP parameters.

Given each frame's radiance and observed image, minimizes the mean
photometric loss over a sampled frame batch, scaled by
``photometric_weight``, plus the per-sensor regularizers, with Adam and
the warmup/decay learning-rate schedule. The trace records the unscaled
photometric loss; ``total`` is the scaled objective.

Parameters live in a flat dict of named blocks:

- sensor/{sensor_id}/vig_mu, vig_alpha, crf_raw
- frame/{frame_id}/delta_t, theta

Sensor blocks are updated every iteration; a frame's blocks only when the
frame is in the batch.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from ppisp.calib.losses import RegBreakdown, photometric_loss, reg_gradients
from ppisp.calib.optimizer import OptimizerState, adam_step
from ppisp.calib.schedule import lr_at
from ppisp.config import CalibrationConfig
from ppisp.dataset import Dataset, FrameRecord
from ppisp.errors import DatasetError, NumericalFailure
from ppisp.grad.adjoints import pipeline_backward
from ppisp.isp.params import FrameParams, SensorParams
from ppisp.isp.pipeline import run_pipeline
from ppisp.isp.precondition import PreconditionBlocks, default_blocks
from ppisp.isp.serialize import ParamSet

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    'iteration', 'photometric', 'exposure', 'color', 'variance', 'vignetting', 'total', 'lr',
]


@dataclass
class CalibrationResult:
    params: ParamSet
    trace: pd.DataFrame     # One row per iteration, columns TRACE_COLUMNS

    def write_trace(self, path) -> Path:
        return write_trace(self.trace, path)


def sensor_key(sensor_id: str, name: str) -> str:
    return f"sensor/{sensor_id}/{name}"


def frame_key(frame_id: str, name: str) -> str:
    return f"frame/{frame_id}/{name}"


def write_trace(trace: pd.DataFrame, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        trace.to_csv(path, index=False, float_format='%.17g')
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}") from e
    return path


class _BatchSampler:
    """Seeded shuffle, reshuffled every epoch."""

    def __init__(self, n_items: int, batch_size: int, rng: np.random.Generator):
        self.n_items = n_items
        self.batch_size = n_items if batch_size == 0 else min(batch_size, n_items)
        self.rng = rng
        self._queue: List[int] = []

    def next_batch(self) -> List[int]:
        if self.batch_size == self.n_items:
            return list(range(self.n_items))
        batch: List[int] = []
        while len(batch) < self.batch_size:
            if not self._queue:
                self._queue = [int(i) for i in self.rng.permutation(self.n_items)]
            candidate = self._queue.pop(0)
            if candidate not in batch:
                batch.append(candidate)
        return batch


def _first_non_finite(arrays: Dict[str, np.ndarray]) -> Optional[str]:
    for key in sorted(arrays):
        if not np.all(np.isfinite(arrays[key])):
            return key
    return None


def calibrate(dataset: Dataset, config: Optional[CalibrationConfig] = None,
              blocks: Optional[PreconditionBlocks] = None) -> CalibrationResult:
    """
    Fit sensor and frame parameters to a dataset.

    Args:
        dataset: Dataset with radiance and observed images
        config: Iterations, batch size, seed, regularizer weights, schedule
        blocks: Preconditioning blocks (defaults to the shared ones)

    Returns:
        CalibrationResult with the fitted ParamSet and the loss trace

    Raises:
        DatasetError: radiance missing, or a sensor with fewer than 2 frames
        NumericalFailure: the loss or a gradient became non-finite
    """
    config = config or CalibrationConfig()
    blocks = blocks or default_blocks()
    dataset.require_radiance()

    records = dataset.select(config.split)
    sensor_ids = sorted({r.sensor_id for r in records})
    if not sensor_ids:
        raise DatasetError(f"no frames to calibrate in {dataset.root}")
    frames_by_sensor: Dict[str, List[FrameRecord]] = {
        sid: [r for r in records if r.sensor_id == sid] for sid in sensor_ids
    }
    for sid, recs in frames_by_sensor.items():
        if len(recs) < 2:
            raise DatasetError(f"sensor '{sid}' has {len(recs)} frame(s); at least 2 are needed")

    # Load every image up front so I/O errors surface before optimizing.
    images = {r.frame_id: (dataset.radiance(r.frame_id), dataset.observed(r.frame_id))
              for r in records}

    params: Dict[str, np.ndarray] = {}
    for sid in sensor_ids:
        for name, value in SensorParams.identity().to_arrays().items():
            params[sensor_key(sid, name)] = value
    for r in records:
        for name, value in FrameParams.identity().to_arrays().items():
            params[frame_key(r.frame_id, name)] = value

    logger.info(f"Calibrating {len(sensor_ids)} sensor(s), {len(records)} frame(s), "
                f"{config.iterations} iterations, batch size {config.batch_size or 'all'}")

    rng = np.random.default_rng(config.seed)
    sampler = _BatchSampler(len(records), config.batch_size, rng)
    state = OptimizerState()
    weight = config.photometric_weight
    rows = []

    for iteration in range(config.iterations):
        lr = lr_at(iteration, config.schedule)
        sensors = {sid: _sensor_from(params, sid) for sid in sensor_ids}
        batch = [records[i] for i in sampler.next_batch()]

        grads: Dict[str, np.ndarray] = {}
        photometric = 0.0
        for record in batch:
            radiance, observed = images[record.frame_id]
            sensor = sensors[record.sensor_id]
            frame = _frame_from(params, record.frame_id)
            trace = run_pipeline(radiance, sensor, frame, blocks)
            loss, g_image = photometric_loss(trace.output, observed)
            if not np.isfinite(loss):
                raise NumericalFailure(iteration, f"frame/{record.frame_id}")
            photometric += loss / len(batch)
            g = pipeline_backward(radiance, sensor, frame, g_image * weight / len(batch),
                                  blocks, trace=trace)
            for name, value in g.sensor_arrays().items():
                key = sensor_key(record.sensor_id, name)
                grads[key] = grads.get(key, 0.0) + value
            for name, value in g.frame_arrays().items():
                grads[frame_key(record.frame_id, name)] = value

        terms = RegBreakdown()
        batch_ids = {r.frame_id for r in batch}
        for sid in sensor_ids:
            recs = frames_by_sensor[sid]
            frames = [_frame_from(params, r.frame_id) for r in recs]
            sensor_terms, g_sensor, g_frames = reg_gradients(
                frames, sensors[sid], config.weights, blocks)
            terms = terms + sensor_terms
            for name, value in g_sensor.items():
                key = sensor_key(sid, name)
                grads[key] = grads.get(key, 0.0) + value
            for r, g_frame in zip(recs, g_frames):
                if r.frame_id not in batch_ids:
                    continue
                for name, value in g_frame.items():
                    grads[frame_key(r.frame_id, name)] = grads[frame_key(r.frame_id, name)] + value

        total = weight * photometric + terms.total
        if not np.isfinite(total):
            raise NumericalFailure(iteration, _first_non_finite(grads) or _first_non_finite(params))
        bad = _first_non_finite(grads)
        if bad is not None:
            raise NumericalFailure(iteration, bad, "non-finite gradient")

        active = {key: params[key] for key in grads}
        updated, state = adam_step(active, grads, state, lr)
        params.update(updated)

        rows.append({
            'iteration': iteration,
            'photometric': photometric,
            'exposure': terms.exposure,
            'color': terms.color,
            'variance': terms.variance,
            'vignetting': terms.vignetting,
            'total': total,
            'lr': lr,
        })
        if iteration % config.log_every == 0 or iteration == config.iterations - 1:
            logger.info(f"iter {iteration}: loss {total:.6e} "
                        f"(photometric {photometric:.6e}, reg {terms.total:.3e}), lr {lr:.3e}")

    result = ParamSet(blocks=blocks)
    for sid in sensor_ids:
        result.sensors[sid] = _sensor_from(params, sid)
    for r in records:
        result.frames[r.frame_id] = _frame_from(params, r.frame_id)
        result.frame_sensors[r.frame_id] = r.sensor_id

    trace_df = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    return CalibrationResult(params=result, trace=trace_df)


def _sensor_from(params: Dict[str, np.ndarray], sensor_id: str) -> SensorParams:
    return SensorParams.from_arrays({
        name: params[sensor_key(sensor_id, name)] for name in ('vig_mu', 'vig_alpha', 'crf_raw')
    })


def _frame_from(params: Dict[str, np.ndarray], frame_id: str) -> FrameParams:
    return FrameParams.from_arrays({
        name: params[frame_key(frame_id, name)] for name in ('delta_t', 'theta')
    })
