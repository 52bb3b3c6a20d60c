# src/ppisp/config.py
"""Run configuration: YAML file, then environment overrides, then CLI flags.

Environment overrides:
- PPISP_SEED: seed for every stage
- PPISP_THREADS: worker cap for parallel stages (0 = auto)
"""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from ppisp.calib.losses import RegWeights
from ppisp.calib.schedule import LrSchedule
from ppisp.errors import ConfigError

logger = logging.getLogger(__name__)

SCHEMA = 'ppisp-config/1'

PRESETS = ('ae-awb', 'ae-only', 'bracketing', 'manual', 'constant')
AWB_MODES = ('random-walk', 'content')


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic dataset generation."""

    seed: int = 0
    frames: int = 32
    width: int = 192
    height: int = 128
    preset: str = 'ae-awb'
    sensors: int = 1                # Sensors; frames are assigned round-robin
    max_radiance: float = 4.0       # Brightest scene value at the brightest illumination
    noise_sigma: float = 0.0        # Gaussian noise on observed images
    ae_jitter: float = 0.05         # AE jitter, stops
    awb_sigma: float = 0.01         # AWB random-walk step
    awb_mode: str = 'random-walk'   # 'random-walk' or 'content'

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset '{self.preset}'; valid presets: {', '.join(PRESETS)}")
        if self.awb_mode not in AWB_MODES:
            raise ValueError(f"unknown awb_mode '{self.awb_mode}'; valid: {', '.join(AWB_MODES)}")
        if self.frames < 1 or self.sensors < 1:
            raise ValueError("frames and sensors must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ValueError("width and height must be >= 1")
        if self.max_radiance <= 0:
            raise ValueError("max_radiance must be positive")
        if self.noise_sigma < 0 or self.ae_jitter < 0 or self.awb_sigma < 0:
            raise ValueError("noise_sigma, ae_jitter and awb_sigma must be non-negative")


@dataclass(frozen=True)
class CalibrationConfig:
    """Joint per-sensor / per-frame calibration."""

    seed: int = 0
    iterations: int = 2000
    batch_size: int = 1             # Frames per iteration; 0 means every frame
    split: str = 'train'            # Frames to calibrate: 'train' or 'all'
    log_every: int = 100
    photometric_weight: float = 1.0     # Scale of the photometric term against the regularizers
    weights: RegWeights = field(default_factory=RegWeights)
    schedule: LrSchedule = field(default_factory=LrSchedule)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.batch_size < 0:
            raise ValueError("batch_size must be non-negative")
        if self.photometric_weight <= 0:
            raise ValueError("photometric_weight must be positive")
        if self.split not in ('train', 'all'):
            raise ValueError(f"split must be 'train' or 'all', got '{self.split}'")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass(frozen=True)
class ControllerTrainingConfig:
    """Controller training against frozen sensor parameters."""

    seed: int = 0
    iterations: int = 1000
    batch_size: int = 1
    log_every: int = 100
    use_metadata: bool = False      # Feed the per-frame EV to the controller
    log_input: bool = False         # Compress the input radiance with log2(1 + L)
    schedule: LrSchedule = field(default_factory=lambda: LrSchedule(s_w=100, s_max=5000))

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    controller: ControllerTrainingConfig = field(default_factory=ControllerTrainingConfig)
    threads: int = 0

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'RunConfig':
        """
        Build from a parsed config document.

        Raises:
            ConfigError: wrong schema, unknown keys, wrong types or out-of-range values
        """
        if not isinstance(doc, dict):
            raise ConfigError("config document must be a mapping")
        doc = dict(doc)
        schema = doc.pop('schema', SCHEMA)
        if schema != SCHEMA:
            raise ConfigError(f"unsupported config schema '{schema}', expected '{SCHEMA}'")

        calibration = dict(_section(doc, 'calibration'))
        calibration_nested = {
            'weights': _build(RegWeights, _section(calibration, 'weights'), 'calibration.weights'),
            'schedule': _build(LrSchedule, _section(calibration, 'schedule'),
                               'calibration.schedule'),
        }
        controller = dict(_section(doc, 'controller'))
        controller_nested = {}
        if 'schedule' in controller:
            defaults = dataclasses.asdict(ControllerTrainingConfig().schedule)
            controller_nested['schedule'] = _build(
                LrSchedule, {**defaults, **_section(controller, 'schedule')},
                'controller.schedule')

        threads = doc.pop('threads', 0)
        _check_type(threads, int, 'threads')
        if threads < 0:
            raise ConfigError("threads must be >= 0")

        result = cls(
            synth=_build(SynthConfig, _section(doc, 'synth'), 'synth'),
            calibration=_build(CalibrationConfig, calibration, 'calibration', calibration_nested),
            controller=_build(ControllerTrainingConfig, controller, 'controller',
                              controller_nested),
            threads=threads,
        )
        if doc:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(doc))}")
        return result

    def with_seed(self, seed: int) -> 'RunConfig':
        """Same config with every stage seeded by ``seed``."""
        return dataclasses.replace(
            self,
            synth=dataclasses.replace(self.synth, seed=seed),
            calibration=dataclasses.replace(self.calibration, seed=seed),
            controller=dataclasses.replace(self.controller, seed=seed),
        )


def _section(doc: Dict[str, Any], key: str) -> Dict[str, Any]:
    value = doc.pop(key, None)
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    return value


def _check_type(value, expected: type, name: str) -> None:
    if expected is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif expected is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, expected)
    if not ok:
        raise ConfigError(f"{name}: expected {expected.__name__}, got {type(value).__name__}")


def _build(cls, values: Dict[str, Any], where: str, nested: Optional[Dict[str, Any]] = None):
    """Instantiate a config dataclass, rejecting unknown keys and mistyped values."""
    nested = nested or {}
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = dict(nested)
    for key, value in values.items():
        if key in nested:
            continue
        if key not in known:
            raise ConfigError(f"unknown key '{where}.{key}'")
        default = getattr(cls(), key)
        _check_type(value, type(default), f"{where}.{key}")
        kwargs[key] = float(value) if isinstance(default, float) else value
    try:
        return cls(**kwargs)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from e


def apply_env_overrides(config: RunConfig) -> RunConfig:
    """Apply PPISP_SEED and PPISP_THREADS when set."""
    seed = os.environ.get('PPISP_SEED')
    if seed:
        try:
            config = config.with_seed(int(seed))
        except ValueError as e:
            raise ConfigError(f"PPISP_SEED must be an integer, got '{seed}'") from e
    threads = os.environ.get('PPISP_THREADS')
    if threads:
        try:
            value = int(threads)
        except ValueError as e:
            raise ConfigError(f"PPISP_THREADS must be an integer, got '{threads}'") from e
        if value < 0:
            raise ConfigError("PPISP_THREADS must be >= 0")
        config = dataclasses.replace(config, threads=value)
    return config


def load_config(config_path: Optional[str] = None) -> RunConfig:
    """Load configuration from a YAML (or JSON) file, then apply environment overrides.

    Without a path the built-in defaults are used.

    Raises:
        ConfigError: missing, unreadable, empty or invalid file
    """
    if config_path is None:
        return apply_env_overrides(RunConfig())

    path = Path(config_path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {config_path}")

    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(f"Invalid YAML in config file: {e}") from e
    except OSError as e:
        raise ConfigError(f"Cannot read config file {config_path}: {e}") from e

    if doc is None:
        raise ConfigError("Config file is empty")

    config = apply_env_overrides(RunConfig.from_dict(doc))
    logger.debug(f"Loaded config from {path}: {config}")
    return config


def resolve_threads(threads: int) -> int:
    """Worker count for a thread cap (0 = one per CPU)."""
    return threads if threads > 0 else (os.cpu_count() or 1)
