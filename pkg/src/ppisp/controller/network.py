# src/ppisp/controller/network.py
"""Per-frame parameter controller.

Maps a radiance image (plus optional scalar metadata such as exposure
compensation) to an exposure offset and the four chromaticity offsets in
preconditioned coordinates:

    conv1 (1x1, 3->16) -> maxpool 3x3 -> ReLU -> conv2 (1x1, 16->32) -> ReLU
    -> conv3 (1x1, 32->64) -> adaptive average pool 5x5 -> flatten (1600)
    -> concat metadata -> mlp1, mlp2, mlp3 (128 each, ReLU)
    -> head_exposure (1) and head_color (8)

The names match the keys of the weight file. Both heads start at zero so a
fresh controller predicts the identity frame transform.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ppisp.core.image import ImageLike, as_array
from ppisp.errors import DatasetError, MetadataMismatchError, UndersizedImageError
from ppisp.isp.params import FrameParams

logger = logging.getLogger(__name__)

SCHEMA = 'ppisp-controller/1'

POOL = 3
GRID = 5
CONV_CHANNELS = (3, 16, 32, 64)
HIDDEN = 128
HIDDEN_LAYERS = 3
FEATURES = GRID * GRID * CONV_CHANNELS[-1]
MIN_SIZE = POOL * GRID


@dataclass(frozen=True)
class ControllerConfig:
    metadata_dim: int = 0       # Scalar side inputs concatenated before the MLP
    log_input: bool = False     # Feed log2(1 + L) instead of L

    def __post_init__(self):
        if self.metadata_dim < 0:
            raise ValueError("metadata_dim must be >= 0")


def weight_shapes(config: ControllerConfig) -> Dict[str, tuple]:
    shapes = {}
    for i in range(3):
        shapes[f"conv{i + 1}.w"] = (CONV_CHANNELS[i + 1], CONV_CHANNELS[i])
        shapes[f"conv{i + 1}.b"] = (CONV_CHANNELS[i + 1],)
    fan_in = FEATURES + config.metadata_dim
    for i in range(HIDDEN_LAYERS):
        shapes[f"mlp{i + 1}.w"] = (HIDDEN, fan_in)
        shapes[f"mlp{i + 1}.b"] = (HIDDEN,)
        fan_in = HIDDEN
    shapes['head_exposure.w'] = (1, HIDDEN)
    shapes['head_exposure.b'] = (1,)
    shapes['head_color.w'] = (8, HIDDEN)
    shapes['head_color.b'] = (8,)
    return shapes


@dataclass
class ControllerWeights:
    config: ControllerConfig
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = weight_shapes(self.config)
        if set(self.arrays) != set(shapes):
            missing = sorted(set(shapes) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(shapes))
            raise ValueError(f"controller weights: missing {missing}, unexpected {extra}")
        for name, shape in shapes.items():
            arr = np.asarray(self.arrays[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite weights")
            self.arrays[name] = arr

    def replace_arrays(self, arrays: Dict[str, np.ndarray]) -> 'ControllerWeights':
        return ControllerWeights(self.config, {k: np.array(v) for k, v in arrays.items()})


def init_weights(config: ControllerConfig, seed: int = 0) -> ControllerWeights:
    """He-normal hidden layers, zero biases, zero heads."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, shape in weight_shapes(config).items():
        if name.startswith('head') or name.endswith('.b'):
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.normal(0.0, np.sqrt(2.0 / shape[1]), shape)
    return ControllerWeights(config, arrays)


def pool_bins(size: int, bins: int = GRID) -> List[tuple]:
    """Adaptive-pool bin i spans [floor(i size / bins), floor((i + 1) size / bins))."""
    return [((i * size) // bins, ((i + 1) * size) // bins) for i in range(bins)]


@dataclass
class ControllerOutput:
    delta_t: float
    theta: np.ndarray           # 4 x 2, preconditioned coordinates

    def frame_params(self) -> FrameParams:
        return FrameParams(delta_t=self.delta_t, theta=self.theta)


@dataclass
class ControllerTrace:
    """Forward intermediates of one image; the backward pass reuses them."""

    windows: np.ndarray         # h3 x w3 x 9 x 3 input pixels grouped by maxpool window
    pool_index: np.ndarray      # h3 x w3 x 16 argmax within each window
    p1: np.ndarray
    a2: np.ndarray
    r2: np.ndarray
    hidden_in: List[np.ndarray]
    hidden_pre: List[np.ndarray]
    h_last: np.ndarray


# Rows of maxpool windows processed per block by conv1.
_CONV1_BLOCK_ROWS = 32


def _prepare(radiance: ImageLike, metadata: Sequence[float],
             config: ControllerConfig) -> tuple:
    x = as_array(radiance)
    if x.shape[0] < MIN_SIZE or x.shape[1] < MIN_SIZE:
        raise UndersizedImageError(
            f"controller needs at least {MIN_SIZE}x{MIN_SIZE} pixels, got {x.shape[0]}x{x.shape[1]}"
        )
    meta = np.asarray(list(metadata), dtype=np.float64)
    if meta.shape != (config.metadata_dim,):
        raise MetadataMismatchError(
            f"expected {config.metadata_dim} metadata value(s), got {meta.size}"
        )
    if config.log_input:
        x = np.log2(1.0 + x)
    return x, meta


def _pool_windows(x: np.ndarray) -> np.ndarray:
    """Group pixels by non-overlapping 3x3 window in row-major order; edges are truncated."""
    h3, w3 = x.shape[0] // POOL, x.shape[1] // POOL
    windows = x[:h3 * POOL, :w3 * POOL].reshape(h3, POOL, w3, POOL, 3)
    return windows.transpose(0, 2, 1, 3, 4).reshape(h3, w3, POOL * POOL, 3)


def _conv1_maxpool(windows: np.ndarray, arrays: Dict[str, np.ndarray], keep_index: bool):
    """conv1 followed by the 3x3 maxpool, a block of window rows at a time."""
    w, b = arrays['conv1.w'], arrays['conv1.b']
    h3, w3 = windows.shape[:2]
    p1 = np.empty((h3, w3, w.shape[0]))
    pool_index = np.empty((h3, w3, w.shape[0]), dtype=np.intp) if keep_index else None
    for r0 in range(0, h3, _CONV1_BLOCK_ROWS):
        a1 = windows[r0:r0 + _CONV1_BLOCK_ROWS] @ w.T + b
        if keep_index:
            # argmax returns the first maximum in row-major window order.
            index = np.argmax(a1, axis=2)
            pool_index[r0:r0 + _CONV1_BLOCK_ROWS] = index
            p1[r0:r0 + _CONV1_BLOCK_ROWS] = np.take_along_axis(
                a1, index[:, :, None, :], axis=2)[:, :, 0, :]
        else:
            p1[r0:r0 + _CONV1_BLOCK_ROWS] = a1.max(axis=2)
    return p1, pool_index


def _forward(x: np.ndarray, meta: np.ndarray, arrays: Dict[str, np.ndarray],
             keep_trace: bool = False):
    windows = _pool_windows(x)
    p1, pool_index = _conv1_maxpool(windows, arrays, keep_trace)
    h3, w3 = p1.shape[:2]
    r1 = np.maximum(p1, 0.0)
    a2 = r1 @ arrays['conv2.w'].T + arrays['conv2.b']
    r2 = np.maximum(a2, 0.0)
    a3 = r2 @ arrays['conv3.w'].T + arrays['conv3.b']

    pooled = np.empty((GRID, GRID, a3.shape[-1]))
    for i, (r0, r1_) in enumerate(pool_bins(h3)):
        for j, (c0, c1) in enumerate(pool_bins(w3)):
            pooled[i, j] = a3[r0:r1_, c0:c1].mean(axis=(0, 1))

    h = np.concatenate([pooled.reshape(-1), meta])
    hidden_in, hidden_pre = [], []
    for i in range(HIDDEN_LAYERS):
        hidden_in.append(h)
        z = arrays[f"mlp{i + 1}.w"] @ h + arrays[f"mlp{i + 1}.b"]
        hidden_pre.append(z)
        h = np.maximum(z, 0.0)

    delta_t = float((arrays['head_exposure.w'] @ h + arrays['head_exposure.b'])[0])
    theta = (arrays['head_color.w'] @ h + arrays['head_color.b']).reshape(4, 2)
    output = ControllerOutput(delta_t=delta_t, theta=theta)
    if not keep_trace:
        return output, None
    trace = ControllerTrace(windows=windows, pool_index=pool_index, p1=p1, a2=a2, r2=r2,
                            hidden_in=hidden_in, hidden_pre=hidden_pre, h_last=h)
    return output, trace


def controller_forward(radiance: ImageLike, metadata: Sequence[float],
                       weights: ControllerWeights) -> ControllerOutput:
    """
    Predict per-frame parameters from radiance.

    Raises:
        UndersizedImageError: image smaller than 15x15
        MetadataMismatchError: metadata length differs from metadata_dim
    """
    x, meta = _prepare(radiance, metadata, weights.config)
    output, _ = _forward(x, meta, weights.arrays)
    return output


def run_controller(radiance: ImageLike, metadata: Sequence[float],
                   weights: ControllerWeights) -> Tuple[ControllerOutput, ControllerTrace]:
    """controller_forward that also keeps the intermediates for controller_backward."""
    x, meta = _prepare(radiance, metadata, weights.config)
    return _forward(x, meta, weights.arrays, keep_trace=True)


@dataclass
class ControllerGradients:
    weights: Dict[str, np.ndarray]
    metadata: np.ndarray


def controller_backward(radiance: ImageLike, metadata: Sequence[float],
                        weights: ControllerWeights, grad_delta_t: float,
                        grad_theta, trace: Optional[ControllerTrace] = None
                        ) -> ControllerGradients:
    """
    Adjoint of controller_forward.

    Args:
        radiance: Same input as the forward pass
        metadata: Same metadata as the forward pass
        weights: Controller weights
        grad_delta_t: dL/d(delta_t)
        grad_theta: dL/d(theta), 4 x 2
        trace: Intermediates from run_controller; recomputed when omitted

    Returns:
        Gradients for every weight array and for the metadata inputs
    """
    arrays = weights.arrays
    if trace is None:
        _, trace = run_controller(radiance, metadata, weights)
    g_theta = np.asarray(grad_theta, dtype=np.float64).reshape(8)
    g_dt = np.array([float(grad_delta_t)])

    grads: Dict[str, np.ndarray] = {
        'head_exposure.w': np.outer(g_dt, trace.h_last),
        'head_exposure.b': g_dt,
        'head_color.w': np.outer(g_theta, trace.h_last),
        'head_color.b': g_theta,
    }
    g_h = arrays['head_exposure.w'].T @ g_dt + arrays['head_color.w'].T @ g_theta
    for i in reversed(range(HIDDEN_LAYERS)):
        g_z = g_h * (trace.hidden_pre[i] > 0.0)
        grads[f"mlp{i + 1}.w"] = np.outer(g_z, trace.hidden_in[i])
        grads[f"mlp{i + 1}.b"] = g_z
        g_h = arrays[f"mlp{i + 1}.w"].T @ g_z

    g_pooled = g_h[:FEATURES].reshape(GRID, GRID, -1)
    g_meta = g_h[FEATURES:]

    h3, w3 = trace.r2.shape[:2]
    g_a3 = np.zeros(trace.r2.shape[:2] + (g_pooled.shape[-1],))
    for i, (r0, r1) in enumerate(pool_bins(h3)):
        for j, (c0, c1) in enumerate(pool_bins(w3)):
            g_a3[r0:r1, c0:c1] += g_pooled[i, j] / ((r1 - r0) * (c1 - c0))

    grads['conv3.w'] = g_a3.reshape(-1, g_a3.shape[-1]).T @ trace.r2.reshape(-1, trace.r2.shape[-1])
    grads['conv3.b'] = g_a3.sum(axis=(0, 1))
    g_a2 = (g_a3 @ arrays['conv3.w']) * (trace.a2 > 0.0)
    r1 = np.maximum(trace.p1, 0.0)
    grads['conv2.w'] = g_a2.reshape(-1, g_a2.shape[-1]).T @ r1.reshape(-1, r1.shape[-1])
    grads['conv2.b'] = g_a2.sum(axis=(0, 1))
    g_p1 = (g_a2 @ arrays['conv2.w']) * (trace.p1 > 0.0)

    # Route each pooled gradient back to its window's argmax.
    channels = g_p1.shape[-1]
    g_windows = np.zeros((h3, w3, POOL * POOL, channels))
    np.put_along_axis(g_windows, trace.pool_index[:, :, None, :], g_p1[:, :, None, :], axis=2)
    grads['conv1.w'] = g_windows.reshape(-1, channels).T @ trace.windows.reshape(-1, 3)
    grads['conv1.b'] = g_windows.sum(axis=(0, 1, 2))

    return ControllerGradients(weights=grads, metadata=g_meta)


def _weights_to_dict(weights: ControllerWeights) -> dict:
    return {name: np.asarray(arr).tolist() for name, arr in sorted(weights.arrays.items())}


def save_controllers(controllers: Dict[str, ControllerWeights], path) -> Path:
    """Write one controller per sensor id to a JSON file."""
    if not controllers:
        raise ValueError("no controllers to save")
    configs = {c.config for c in controllers.values()}
    if len(configs) != 1:
        raise ValueError("all controllers in one file must share a config")
    config = configs.pop()
    doc = {
        'schema': SCHEMA,
        'metadata_dim': config.metadata_dim,
        'log_input': config.log_input,
        'sensors': {sid: _weights_to_dict(w) for sid, w in sorted(controllers.items())},
    }
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(doc, sort_keys=True) + '\n')
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}") from e
    return path


def load_controllers(path, expected: Optional[ControllerConfig] = None
                     ) -> Dict[str, ControllerWeights]:
    """
    Read a controller file.

    Raises:
        DatasetError: unreadable or malformed file
        MetadataMismatchError: recorded metadata_dim differs from ``expected``
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise DatasetError(f"cannot read controller file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"invalid JSON in {path}: {e}") from e
    if not isinstance(doc, dict) or doc.get('schema') != SCHEMA:
        raise DatasetError(f"{path}: unsupported controller schema, expected '{SCHEMA}'")

    config = ControllerConfig(metadata_dim=int(doc.get('metadata_dim', 0)),
                              log_input=bool(doc.get('log_input', False)))
    if expected is not None and expected.metadata_dim != config.metadata_dim:
        raise MetadataMismatchError(
            f"{path} was trained with metadata_dim={config.metadata_dim}, "
            f"expected {expected.metadata_dim}"
        )
    controllers = {}
    for sid, arrays in doc.get('sensors', {}).items():
        try:
            controllers[sid] = ControllerWeights(
                config, {name: np.asarray(v, dtype=np.float64) for name, v in arrays.items()})
        except ValueError as e:
            raise DatasetError(f"{path}: sensor '{sid}': {e}") from e
    return controllers
