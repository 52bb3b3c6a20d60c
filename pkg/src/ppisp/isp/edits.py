# src/ppisp/isp/edits.py
"""Manual parameter edits in KEY=VALUE form.

    exposure=+1.0           add stops to the frame's exposure offset
    wb=du,dv                set the white-point chromaticity offset
    primary.r=du,dv         set a primary's chromaticity offset (r, g or b)
    crf.gamma=0.5           set a CRF parameter (tau, eta, xi, gamma) on all channels
    crf.tau.g=1.2           ... or on one channel
    vig.alpha1=-0.3         set a falloff coefficient (alpha1..alpha3), all or one channel
    vig.center=x,y          set the optical-center offset, all or one channel
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import numpy as np

from ppisp.errors import ConfigError
from ppisp.isp.params import (
    CHANNELS,
    CRF_FIELDS,
    CrfParams,
    FrameParams,
    SensorParams,
    VignettingParams,
)
from ppisp.isp.precondition import PreconditionBlocks, default_blocks

logger = logging.getLogger(__name__)

EXPOSURE_KEY = 'exposure'


@dataclass(frozen=True)
class Edit:
    key: str
    values: Tuple[float, ...]

    @property
    def is_exposure(self) -> bool:
        return self.key == EXPOSURE_KEY


def parse_edit(text: str) -> Edit:
    """Parse one KEY=VALUE edit; the value is a float or a comma-separated pair."""
    key, sep, raw = text.partition('=')
    key = key.strip()
    if not sep or not key or not raw.strip():
        raise ConfigError(f"edit '{text}' is not of the form KEY=VALUE")
    try:
        values = tuple(float(v) for v in raw.split(','))
    except ValueError as e:
        raise ConfigError(f"edit '{text}': values must be numbers") from e
    if not all(np.isfinite(values)):
        raise ConfigError(f"edit '{text}': values must be finite")
    edit = Edit(key=key, values=values)
    _target(edit)
    return edit


def _expect(edit: Edit, count: int) -> None:
    if len(edit.values) != count:
        raise ConfigError(f"'{edit.key}' takes {count} value(s), got {len(edit.values)}")


def _channels(parts: List[str], edit: Edit) -> List[int]:
    if not parts:
        return [0, 1, 2]
    if len(parts) == 1 and parts[0] in CHANNELS:
        return [CHANNELS.index(parts[0])]
    raise ConfigError(f"unknown edit key '{edit.key}'")


def _target(edit: Edit) -> tuple:
    """Validate an edit key; returns (kind, field, channels)."""
    parts = edit.key.split('.')
    head = parts[0]
    if edit.key == EXPOSURE_KEY:
        _expect(edit, 1)
        return ('exposure', None, None)
    if edit.key == 'wb':
        _expect(edit, 2)
        return ('color', 3, None)
    if head == 'primary' and len(parts) == 2 and parts[1] in CHANNELS:
        _expect(edit, 2)
        return ('color', CHANNELS.index(parts[1]), None)
    if head == 'crf' and len(parts) >= 2 and parts[1] in CRF_FIELDS:
        _expect(edit, 1)
        return ('crf', CRF_FIELDS.index(parts[1]), _channels(parts[2:], edit))
    if head == 'vig' and len(parts) >= 2:
        if parts[1] in ('alpha1', 'alpha2', 'alpha3'):
            _expect(edit, 1)
            return ('alpha', int(parts[1][-1]) - 1, _channels(parts[2:], edit))
        if parts[1] == 'center':
            _expect(edit, 2)
            return ('center', None, _channels(parts[2:], edit))
    raise ConfigError(f"unknown edit key '{edit.key}'")


def apply_edits(sensor: SensorParams, frame: FrameParams, edits: Iterable[Edit],
                blocks: Optional[PreconditionBlocks] = None
                ) -> Tuple[SensorParams, FrameParams]:
    """
    Apply edits in order on top of the given parameters.

    Raises:
        ConfigError: unknown key, wrong value count or out-of-range CRF value
    """
    blocks = blocks or default_blocks()
    delta_t = frame.delta_t
    offsets = np.array(frame.color_offsets(blocks))
    crf = sensor.crf.materialized()
    mu = np.array(sensor.vignetting.mu)
    alpha = np.array(sensor.vignetting.alpha)
    edited = set()

    for edit in edits:
        kind, index, channels = _target(edit)
        edited.add(kind)
        if kind == 'exposure':
            delta_t += edit.values[0]
        elif kind == 'color':
            offsets[index] = edit.values
        elif kind == 'crf':
            crf[channels, index] = edit.values[0]
        elif kind == 'alpha':
            alpha[channels, index] = edit.values[0]
        else:
            mu[channels] = edit.values
        logger.debug(f"Applied edit {edit.key}={','.join(str(v) for v in edit.values)}")

    # Untouched CRF and color blocks keep their stored coordinates exactly.
    new_crf = sensor.crf
    if 'crf' in edited:
        try:
            new_crf = CrfParams.from_materialized(*crf.T)
        except ValueError as e:
            raise ConfigError(f"invalid CRF edit: {e}") from e
    new_sensor = SensorParams(vignetting=VignettingParams(mu=mu, alpha=alpha), crf=new_crf)
    if 'color' in edited:
        new_frame = FrameParams.from_offsets(delta_t, offsets, blocks)
    else:
        new_frame = frame.replace(delta_t=delta_t)
    return new_sensor, new_frame
