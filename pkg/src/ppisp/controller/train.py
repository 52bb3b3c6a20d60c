# src/ppisp/controller/train.py
"""Controller training against frozen sensor parameters.

Each sensor gets its own controller. Predicted frame parameters are pushed
through the frozen pipeline and the photometric loss against the observed
image is backpropagated into the controller weights.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from ppisp.calib.calibrate import _BatchSampler, _first_non_finite, write_trace
from ppisp.calib.losses import photometric_loss
from ppisp.calib.optimizer import OptimizerState, adam_step
from ppisp.calib.schedule import lr_at
from ppisp.config import ControllerTrainingConfig
from ppisp.controller.network import (
    ControllerConfig,
    ControllerWeights,
    controller_backward,
    controller_forward,
    init_weights,
    run_controller,
)
from ppisp.core.image import ImageLike
from ppisp.dataset import Dataset, FrameRecord
from ppisp.errors import DatasetError, NumericalFailure
from ppisp.grad.adjoints import pipeline_backward
from ppisp.isp.params import FrameParams
from ppisp.isp.pipeline import run_pipeline
from ppisp.isp.precondition import PreconditionBlocks, default_blocks
from ppisp.isp.serialize import ParamSet

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['sensor', 'iteration', 'loss', 'lr']


@dataclass
class ControllerTrainingResult:
    controllers: Dict[str, ControllerWeights]
    trace: pd.DataFrame     # One row per sensor and iteration, columns TRACE_COLUMNS

    def write_trace(self, path) -> Path:
        return write_trace(self.trace, path)


def frame_metadata(record: FrameRecord, config: ControllerConfig) -> List[float]:
    """Metadata vector for a frame: its relative EV when the controller takes one."""
    if config.metadata_dim == 0:
        return []
    if record.ev is None:
        raise DatasetError(f"frame '{record.frame_id}' has no EV metadata")
    return [float(record.ev)]


def predict_frame(radiance: ImageLike, record: FrameRecord,
                  controllers: Dict[str, ControllerWeights]) -> FrameParams:
    """Frame parameters predicted by the frame's sensor controller."""
    if record.sensor_id not in controllers:
        raise DatasetError(f"no controller for sensor '{record.sensor_id}'")
    weights = controllers[record.sensor_id]
    output = controller_forward(radiance, frame_metadata(record, weights.config), weights)
    return output.frame_params()


def train_controller(dataset: Dataset, params: ParamSet,
                     config: Optional[ControllerTrainingConfig] = None,
                     blocks: Optional[PreconditionBlocks] = None) -> ControllerTrainingResult:
    """
    Train one controller per sensor on the dataset's training frames.

    Args:
        dataset: Dataset with radiance and observed images
        params: Calibrated parameters; only the sensors are used, and stay frozen
        config: Iterations, batch size, seed, schedule and input options
        blocks: Preconditioning blocks (defaults to the shared ones)

    Returns:
        ControllerTrainingResult with the weights per sensor and the loss trace

    Raises:
        DatasetError: radiance missing, no training frames, or a sensor without params
        NumericalFailure: the loss or a gradient became non-finite
    """
    config = config or ControllerTrainingConfig()
    blocks = blocks or params.blocks or default_blocks()
    dataset.require_radiance()
    net_config = ControllerConfig(metadata_dim=1 if config.use_metadata else 0,
                                  log_input=config.log_input)

    records = dataset.select('train')
    if not records:
        raise DatasetError(f"no training frames in {dataset.root}")
    sensor_ids = sorted({r.sensor_id for r in records})
    for sid in sensor_ids:
        if sid not in params.sensors:
            raise DatasetError(f"calibrated params have no sensor '{sid}'")

    controllers: Dict[str, ControllerWeights] = {}
    rows = []
    for k, sid in enumerate(sensor_ids):
        recs = [r for r in records if r.sensor_id == sid]
        samples = [(r, dataset.radiance(r.frame_id), dataset.observed(r.frame_id),
                    frame_metadata(r, net_config)) for r in recs]
        weights = init_weights(net_config, seed=config.seed + k)
        logger.info(f"Training controller for {sid}: {len(recs)} frame(s), "
                    f"{config.iterations} iterations")
        weights = _train_sensor(sid, samples, params.sensors[sid], weights, config, blocks, rows)
        controllers[sid] = weights

    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    return ControllerTrainingResult(controllers=controllers, trace=trace)


def _train_sensor(sensor_id: str, samples, sensor, weights: ControllerWeights,
                  config: ControllerTrainingConfig, blocks: PreconditionBlocks,
                  rows: List[dict]) -> ControllerWeights:
    rng = np.random.default_rng([config.seed, len(samples)])
    sampler = _BatchSampler(len(samples), config.batch_size, rng)
    state = OptimizerState()
    arrays = dict(weights.arrays)

    for iteration in range(config.iterations):
        lr = lr_at(iteration, config.schedule)
        current = weights.replace_arrays(arrays) if iteration else weights
        batch = sampler.next_batch()
        grads: Dict[str, np.ndarray] = {}
        loss = 0.0
        for i in batch:
            record, radiance, observed, meta = samples[i]
            output, controller_trace = run_controller(radiance, meta, current)
            frame = output.frame_params()
            trace = run_pipeline(radiance, sensor, frame, blocks)
            frame_loss, g_image = photometric_loss(trace.output, observed)
            if not np.isfinite(frame_loss):
                raise NumericalFailure(iteration, f"frame/{record.frame_id}")
            loss += frame_loss / len(batch)
            g = pipeline_backward(radiance, sensor, frame, g_image / len(batch), blocks,
                                  trace=trace)
            cg = controller_backward(radiance, meta, current, g.delta_t, g.theta,
                                     trace=controller_trace)
            for name, value in cg.weights.items():
                grads[name] = grads.get(name, 0.0) + value

        bad = _first_non_finite(grads)
        if bad is not None:
            raise NumericalFailure(iteration, f"controller/{sensor_id}/{bad}",
                                   "non-finite gradient")
        arrays, state = adam_step(arrays, grads, state, lr)
        rows.append({'sensor': sensor_id, 'iteration': iteration, 'loss': loss, 'lr': lr})
        if iteration % config.log_every == 0 or iteration == config.iterations - 1:
            logger.info(f"{sensor_id} iter {iteration}: loss {loss:.6e}, lr {lr:.3e}")

    return weights.replace_arrays(arrays)
