# src/ppisp/isp/serialize.py
"""JSON documents for calibrated parameters.

Raw (unconstrained) values are authoritative on load; materialized values
are written alongside for inspection. Floats are written with Python's
shortest round-trip repr, so save -> load is exact.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ppisp.errors import DatasetError
from ppisp.isp.params import CrfParams, FrameParams, SensorParams, VignettingParams
from ppisp.isp.precondition import PreconditionBlocks, default_blocks

logger = logging.getLogger(__name__)

SCHEMA = 'ppisp-params/1'


@dataclass
class ParamSet:
    """Sensor parameters by sensor id and frame parameters by frame id."""

    sensors: Dict[str, SensorParams] = field(default_factory=dict)
    frames: Dict[str, FrameParams] = field(default_factory=dict)
    frame_sensors: Dict[str, str] = field(default_factory=dict)   # frame id -> sensor id
    blocks: PreconditionBlocks = field(default_factory=default_blocks)

    def sensor_for(self, frame_id: str) -> SensorParams:
        return self.sensors[self.frame_sensors[frame_id]]


def _tolist(arr) -> List:
    return np.asarray(arr, dtype=np.float64).tolist()


def sensor_to_dict(sensor: SensorParams) -> dict:
    crf = sensor.crf
    return {
        'vignetting': {
            'mu': _tolist(sensor.vignetting.mu),
            'alpha': _tolist(sensor.vignetting.alpha),
        },
        'crf': {
            'raw': _tolist(crf.raw),
            'tau': _tolist(crf.tau),
            'eta': _tolist(crf.eta),
            'xi': _tolist(crf.xi),
            'gamma': _tolist(crf.gamma),
        },
    }


def sensor_from_dict(d: dict) -> SensorParams:
    try:
        return SensorParams(
            vignetting=VignettingParams(mu=d['vignetting']['mu'], alpha=d['vignetting']['alpha']),
            crf=CrfParams(raw=d['crf']['raw']),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"malformed sensor parameters: {e}") from e


def frame_to_dict(frame: FrameParams, blocks: PreconditionBlocks,
                  sensor_id: Optional[str] = None) -> dict:
    d = {
        'delta_t': frame.delta_t,
        'theta': _tolist(frame.theta),
        'offsets': _tolist(frame.color_offsets(blocks)),
    }
    if sensor_id is not None:
        d['sensor'] = sensor_id
    return d


def frame_from_dict(d: dict) -> FrameParams:
    try:
        return FrameParams(delta_t=float(d['delta_t']), theta=d['theta'])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"malformed frame parameters: {e}") from e


def params_to_dict(params: ParamSet) -> dict:
    return {
        'schema': SCHEMA,
        'blocks': _tolist(params.blocks.blocks),
        'sensors': {sid: sensor_to_dict(s) for sid, s in params.sensors.items()},
        'frames': {
            fid: frame_to_dict(f, params.blocks, params.frame_sensors.get(fid))
            for fid, f in params.frames.items()
        },
    }


def params_from_dict(doc: dict) -> ParamSet:
    if not isinstance(doc, dict) or doc.get('schema') != SCHEMA:
        raise DatasetError(f"unsupported parameter file schema, expected '{SCHEMA}'")
    try:
        blocks = PreconditionBlocks(np.asarray(doc['blocks'], dtype=np.float64))
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"malformed preconditioning blocks: {e}") from e
    params = ParamSet(blocks=blocks)
    for sid, sd in doc.get('sensors', {}).items():
        params.sensors[sid] = sensor_from_dict(sd)
    for fid, fd in doc.get('frames', {}).items():
        params.frames[fid] = frame_from_dict(fd)
        if 'sensor' in fd:
            if fd['sensor'] not in params.sensors:
                raise DatasetError(f"frame {fid} refers to unknown sensor '{fd['sensor']}'")
            params.frame_sensors[fid] = fd['sensor']
    return params


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + '\n'


def save_params(params: ParamSet, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dumps(params_to_dict(params)))
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}") from e
    logger.info(f"Saved parameters for {len(params.sensors)} sensor(s), "
                f"{len(params.frames)} frame(s) to {path}")
    return path


def load_params(path) -> ParamSet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as e:
        raise DatasetError(f"cannot read parameter file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"invalid JSON in {path}: {e}") from e
    return params_from_dict(doc)
