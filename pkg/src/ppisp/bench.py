# src/ppisp/bench.py
"""Single-core throughput of the forward pipeline, with and without the controller.

Budgets at 1920x1080: 50 ms for pipeline_forward, 250 ms for the controller
plus pipeline_forward.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from ppisp.controller.network import ControllerConfig, controller_forward, init_weights
from ppisp.core.image import ImageBuffer
from ppisp.isp.params import FrameParams
from ppisp.isp.pipeline import pipeline_forward
from ppisp.synth.capture import default_truth_sensor

logger = logging.getLogger(__name__)

PIPELINE_BUDGET_MS = 50.0
CONTROLLER_BUDGET_MS = 250.0


@dataclass
class BenchResult:
    width: int
    height: int
    repeat: int
    pipeline_ms: float          # Median wall time of pipeline_forward
    controller_ms: float        # Median wall time of controller_forward + pipeline_forward

    @property
    def pipeline_within_budget(self) -> bool:
        return self.pipeline_ms <= PIPELINE_BUDGET_MS

    @property
    def controller_within_budget(self) -> bool:
        return self.controller_ms <= CONTROLLER_BUDGET_MS


def _median_ms(fn: Callable[[], object], repeat: int) -> float:
    times: List[float] = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append((time.perf_counter() - start) * 1000.0)
    return float(np.median(times))


def run_bench(width: int = 1920, height: int = 1080, repeat: int = 5,
              seed: int = 0) -> BenchResult:
    """
    Time the forward passes on a random radiance image.

    The first call of each path is a warmup and is not timed.

    Raises:
        ValueError: non-positive size or repeat count
    """
    if width < 1 or height < 1 or repeat < 1:
        raise ValueError("width, height and repeat must be >= 1")
    rng = np.random.default_rng(seed)
    radiance = ImageBuffer(rng.uniform(0.0, 2.0, (height, width, 3)))
    sensor = default_truth_sensor()
    frame = FrameParams(delta_t=-0.5, theta=rng.normal(0.0, 0.01, (4, 2)))
    weights = init_weights(ControllerConfig(), seed=seed)

    def pipeline():
        return pipeline_forward(radiance, sensor, frame)

    def controlled():
        predicted = controller_forward(radiance, [], weights).frame_params()
        return pipeline_forward(radiance, sensor, predicted)

    pipeline()
    pipeline_ms = _median_ms(pipeline, repeat)
    controlled()
    controller_ms = _median_ms(controlled, repeat)
    logger.info(f"{width}x{height}: pipeline {pipeline_ms:.1f} ms, "
                f"with controller {controller_ms:.1f} ms ({repeat} runs)")
    return BenchResult(width=width, height=height, repeat=repeat,
                       pipeline_ms=pipeline_ms, controller_ms=controller_ms)
