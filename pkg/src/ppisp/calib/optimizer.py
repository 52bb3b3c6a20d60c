# src/ppisp/calib/optimizer.py
"""Bias-corrected Adam over a flat dict of named parameter blocks.

Blocks may be updated sparsely: a call only touches the blocks it is
given, and each block's bias correction uses the number of updates that
block has received.
"""

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from ppisp.errors import ShapeMismatchError


@dataclass
class OptimizerState:
    """First/second moment estimates per block plus step counters."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0                                           # Calls to adam_step
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)    # Updates per block


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: OptimizerState, lr: float) -> Tuple[Dict[str, np.ndarray], OptimizerState]:
    """
    One Adam update.

    Blocks are visited in sorted key order. The buffers in ``state`` are
    updated in place; params are not modified, a new dict is returned.

    Args:
        params: Parameter blocks to update
        grads: Gradient per block, same keys and shapes as params
        state: Optimizer state (mutated)
        lr: Learning rate for this step

    Returns:
        (updated params, state)

    Raises:
        ShapeMismatchError: a gradient is missing or has the wrong shape
    """
    state.step += 1
    updated = {}
    for key in sorted(params):
        p = np.asarray(params[key], dtype=np.float64)
        if key not in grads:
            raise ShapeMismatchError(f"no gradient for parameter block '{key}'")
        g = np.asarray(grads[key], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeMismatchError(
                f"gradient for '{key}' has shape {g.shape}, expected {p.shape}"
            )

        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
            state.counts[key] = 0
        state.counts[key] += 1
        t = state.counts[key]
        state.m[key] = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        state.v[key] = state.beta2 * state.v[key] + (1.0 - state.beta2) * (g * g)

        bc1 = 1.0 - state.beta1 ** t
        bc2 = 1.0 - state.beta2 ** t
        denom = np.sqrt(state.v[key] / bc2) + state.eps
        updated[key] = p - (lr / bc1) * state.m[key] / denom
    return updated, state
