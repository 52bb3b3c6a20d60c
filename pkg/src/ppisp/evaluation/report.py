# src/ppisp/evaluation/report.py
"""Per-frame evaluation of rendered images, written as JSON and CSV."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from ppisp.core.image import ImageLike
from ppisp.core.image_io import load_pfm
from ppisp.dataset import Dataset
from ppisp.errors import DatasetError
from ppisp.evaluation.analysis import ParamAnalysis
from ppisp.evaluation.metrics import affine_align, psnr

logger = logging.getLogger(__name__)

SCHEMA = 'ppisp-eval/1'
DOMINANCE_TOL = 1e-9

CSV_COLUMNS = [
    'frame', 'split', 'psnr', 'psnr_cc', 'mse_cc_unclamped',
    'a_r', 'b_r', 'a_g', 'b_g', 'a_b', 'b_b',
]


@dataclass
class FrameEval:
    frame_id: str
    split: str
    psnr: float
    psnr_cc: float
    coefficients: np.ndarray    # 3 x 2, rows (a, b) per channel
    mse_cc_unclamped: float

    def __post_init__(self):
        if self.psnr_cc < self.psnr - DOMINANCE_TOL:
            raise ValueError(
                f"frame {self.frame_id}: PSNR-CC {self.psnr_cc} below PSNR {self.psnr}")

    def to_row(self) -> dict:
        row = {'frame': self.frame_id, 'split': self.split, 'psnr': self.psnr,
               'psnr_cc': self.psnr_cc, 'mse_cc_unclamped': self.mse_cc_unclamped}
        for c, name in enumerate('rgb'):
            row[f"a_{name}"] = float(self.coefficients[c, 0])
            row[f"b_{name}"] = float(self.coefficients[c, 1])
        return row


def evaluate_frame(frame_id: str, split: str, pred: ImageLike, gt: ImageLike) -> FrameEval:
    alignment = affine_align(pred, gt)
    return FrameEval(
        frame_id=frame_id,
        split=split,
        psnr=psnr(pred, gt),
        psnr_cc=psnr(alignment.aligned, gt),
        coefficients=alignment.coefficients,
        mse_cc_unclamped=alignment.mse_unclamped,
    )


@dataclass
class EvalReport:
    frames: List[FrameEval] = field(default_factory=list)
    analysis: Optional[ParamAnalysis] = None

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([f.psnr for f in self.frames])) if self.frames else float('nan')

    @property
    def mean_psnr_cc(self) -> float:
        return float(np.mean([f.psnr_cc for f in self.frames])) if self.frames else float('nan')

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([f.to_row() for f in self.frames], columns=CSV_COLUMNS)

    def to_dict(self) -> dict:
        doc = {
            'schema': SCHEMA,
            'aggregate': {
                'frames': len(self.frames),
                'psnr': self.mean_psnr if self.frames else None,
                'psnr_cc': self.mean_psnr_cc if self.frames else None,
            },
            'frames': [f.to_row() for f in self.frames],
        }
        if self.analysis is not None:
            doc['analysis'] = self.analysis.to_dict()
        return doc

    def write(self, out_dir) -> Path:
        """Write report.json and report.csv into out_dir."""
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / 'report.json').write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
            self.to_frame().to_csv(out / 'report.csv', index=False, float_format='%.17g')
        except OSError as e:
            raise DatasetError(f"cannot write report to {out}: {e}") from e
        logger.info(f"Wrote evaluation report to {out}")
        return out


def evaluate_renders(dataset: Dataset, pred_dir, split: str = 'test') -> EvalReport:
    """
    Compare rendered PFMs named {frame_id}.pfm in pred_dir with the observed images.

    Raises:
        DatasetError: a rendered image is missing or unreadable
    """
    pred_dir = Path(pred_dir)
    report = EvalReport()
    for record in dataset.select(split):
        path = pred_dir / f"{record.frame_id}.pfm"
        if not path.exists():
            raise DatasetError(f"rendered image not found: {path}")
        frame = evaluate_frame(record.frame_id, record.split, load_pfm(path),
                               dataset.observed(record.frame_id))
        logger.debug(f"{record.frame_id}: PSNR {frame.psnr:.3f}, PSNR-CC {frame.psnr_cc:.3f}")
        report.frames.append(frame)
    return report
