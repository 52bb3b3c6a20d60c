# src/ppisp/dataset.py
"""Directory-backed capture datasets.

Layout::

    meta.json                 frame list, sensors, split, EV metadata
    radiance/{frame_id}.pfm   linear input radiance
    images/{frame_id}.pfm     observed image in [0, 1]
    images/{frame_id}.png     8-bit preview
    truth.json                ground truth, sealed (see ppisp.synth.capture)

The Dataset reader never opens truth.json.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

from ppisp.core.image import ImageBuffer
from ppisp.core.image_io import load_pfm
from ppisp.errors import DatasetError

logger = logging.getLogger(__name__)

SCHEMA = 'ppisp-dataset/1'
SPLITS = ('train', 'test')
TEST_EVERY = 8


def split_for_index(index: int) -> str:
    """Seven train frames, then one test frame."""
    return 'test' if index % TEST_EVERY == TEST_EVERY - 1 else 'train'


@dataclass(frozen=True)
class FrameRecord:
    """One captured frame as listed in meta.json."""

    frame_id: str
    sensor_id: str
    split: str                  # 'train' or 'test'
    ev: Optional[float] = None  # Scripted relative exposure, when the capture exposes it

    def to_dict(self) -> dict:
        return {'id': self.frame_id, 'sensor': self.sensor_id, 'split': self.split, 'ev': self.ev}

    @classmethod
    def from_dict(cls, d: dict) -> 'FrameRecord':
        try:
            record = cls(
                frame_id=str(d['id']),
                sensor_id=str(d['sensor']),
                split=str(d['split']),
                ev=None if d.get('ev') is None else float(d['ev']),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"malformed frame record {d!r}: {e}") from e
        if record.split not in SPLITS:
            raise DatasetError(f"frame {record.frame_id}: unknown split '{record.split}'")
        return record


class Dataset:
    """Read access to a dataset directory, with lazily cached images."""

    def __init__(self, root):
        self.root = Path(root)
        self._meta: Optional[dict] = None
        self._frames: Optional[List[FrameRecord]] = None
        self._cache: Dict[str, ImageBuffer] = {}

    def __enter__(self):
        """Context manager entry."""
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Context manager exit - drop cached images."""
        self.close()
        return False

    def close(self):
        self._cache.clear()

    @property
    def meta_path(self) -> Path:
        return self.root / 'meta.json'

    @property
    def radiance_dir(self) -> Path:
        return self.root / 'radiance'

    @property
    def images_dir(self) -> Path:
        return self.root / 'images'

    def _get_meta(self) -> dict:
        if self._meta is None:
            if not self.meta_path.exists():
                raise DatasetError(f"dataset manifest not found: {self.meta_path}")
            try:
                meta = json.loads(self.meta_path.read_text())
            except OSError as e:
                raise DatasetError(f"cannot read {self.meta_path}: {e}") from e
            except json.JSONDecodeError as e:
                raise DatasetError(f"invalid JSON in {self.meta_path}: {e}") from e
            schema = meta.get('schema') if isinstance(meta, dict) else None
            if schema != SCHEMA:
                raise DatasetError(
                    f"{self.meta_path}: unsupported schema {schema!r}, expected '{SCHEMA}'"
                )
            self._meta = meta
        return self._meta

    @property
    def meta(self) -> dict:
        return self._get_meta()

    @property
    def frames(self) -> List[FrameRecord]:
        if self._frames is None:
            self._frames = [FrameRecord.from_dict(d) for d in self._get_meta().get('frames', [])]
        return self._frames

    def frame(self, frame_id: str) -> FrameRecord:
        for record in self.frames:
            if record.frame_id == frame_id:
                return record
        raise DatasetError(f"frame '{frame_id}' not in dataset {self.root}")

    def sensors(self) -> List[str]:
        """Sensor ids in order of first appearance."""
        seen: List[str] = []
        for record in self.frames:
            if record.sensor_id not in seen:
                seen.append(record.sensor_id)
        return seen

    def select(self, split: Optional[str] = None,
               sensor_id: Optional[str] = None) -> List[FrameRecord]:
        """Frames filtered by split ('train', 'test', or None/'all') and sensor."""
        if split not in (None, 'all') + SPLITS:
            raise DatasetError(f"unknown split '{split}'")
        return [
            r for r in self.frames
            if (split in (None, 'all') or r.split == split)
            and (sensor_id is None or r.sensor_id == sensor_id)
        ]

    def require_radiance(self) -> None:
        """Raise unless the radiance directory exists."""
        if not self.radiance_dir.is_dir():
            raise DatasetError(f"radiance directory not found: {self.radiance_dir}")

    def _load(self, path: Path) -> ImageBuffer:
        key = str(path)
        if key not in self._cache:
            if not path.exists():
                raise DatasetError(f"image not found: {path}")
            self._cache[key] = load_pfm(path)
        return self._cache[key]

    def radiance(self, frame_id: str) -> ImageBuffer:
        return self._load(self.radiance_dir / f"{frame_id}.pfm")

    def observed(self, frame_id: str) -> ImageBuffer:
        return self._load(self.images_dir / f"{frame_id}.pfm")


def write_manifest(root, frames: List[FrameRecord], extra: Optional[dict] = None) -> Path:
    """Write meta.json for a dataset directory."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    meta = {'schema': SCHEMA, 'frames': [f.to_dict() for f in frames]}
    meta.update(extra or {})
    path = root / 'meta.json'
    try:
        path.write_text(json.dumps(meta, indent=2, sort_keys=True) + '\n')
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}") from e
    return path
