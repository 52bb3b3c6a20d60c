# src/ppisp/evaluation/curves.py
"""Sampled CRF and vignetting curves per sensor, as a table and a plot.

curves.csv columns:
    sensor      sensor id
    x           sample position in [0, 1]: CRF input and normalized radius
    crf_r/g/b   response of each channel at x
    vig_r/g/b   falloff of each channel at radius x from its optical center
"""

import logging
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from ppisp.errors import DatasetError
from ppisp.evaluation.analysis import CURVE_POINTS, crf_curve, curve_grid, vignetting_curve
from ppisp.isp.params import CHANNELS, SensorParams

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['sensor', 'x'] + [f"crf_{c}" for c in CHANNELS] + [f"vig_{c}" for c in CHANNELS]
PLOT_COLORS = {'r': 'tab:red', 'g': 'tab:green', 'b': 'tab:blue'}


def curves_table(sensors: Dict[str, SensorParams], points: int = CURVE_POINTS) -> pd.DataFrame:
    frames = []
    for sid in sorted(sensors):
        crf = crf_curve(sensors[sid].crf, points)
        vig = vignetting_curve(sensors[sid].vignetting, points)
        table = pd.DataFrame({'sensor': sid, 'x': curve_grid(points)})
        for k, c in enumerate(CHANNELS):
            table[f"crf_{c}"] = crf[:, k]
        for k, c in enumerate(CHANNELS):
            table[f"vig_{c}"] = vig[:, k]
        frames.append(table)
    if not frames:
        return pd.DataFrame(columns=CURVE_COLUMNS)
    return pd.concat(frames, ignore_index=True)[CURVE_COLUMNS]


def write_curves(table: pd.DataFrame, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False, float_format='%.17g')
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}") from e
    return path


def plot_curves(table: pd.DataFrame, path, truth: Optional[pd.DataFrame] = None) -> Path:
    """Two panels per sensor (CRF, vignetting); truth curves dashed when given."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    sensors = list(dict.fromkeys(table['sensor']))
    fig, axes = plt.subplots(len(sensors), 2, figsize=(9, 4 * len(sensors)), squeeze=False)
    for row, sid in enumerate(sensors):
        part = table[table['sensor'] == sid]
        ref = truth[truth['sensor'] == sid] if truth is not None else None
        for col, (prefix, title, xlabel) in enumerate([
            ('crf', 'Camera response', 'input'),
            ('vig', 'Vignetting falloff', 'normalized radius'),
        ]):
            ax = axes[row, col]
            for c in CHANNELS:
                ax.plot(part['x'], part[f"{prefix}_{c}"], '-', color=PLOT_COLORS[c],
                        linewidth=1.2, label=f"{c}")
                if ref is not None and len(ref):
                    ax.plot(ref['x'], ref[f"{prefix}_{c}"], '--', color=PLOT_COLORS[c],
                            linewidth=0.8, label=f"{c} (truth)")
            ax.set_title(f"{title} - {sid}")
            ax.set_xlabel(xlabel)
            ax.set_xlim(0.0, 1.0)
            ax.set_ylim(0.0, 1.05)
            ax.grid(True, alpha=0.3)
            ax.legend(loc='lower right', fontsize=8)

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.tight_layout()
        fig.savefig(path, format='svg')
    except OSError as e:
        raise DatasetError(f"cannot write {path}: {e}") from e
    finally:
        plt.close(fig)
    logger.info(f"Wrote curve plot to {path}")
    return path


def curve_differences(table: pd.DataFrame, truth: pd.DataFrame) -> pd.DataFrame:
    """Per-sensor, per-channel RMSE between two curve tables sampled on the same grid."""
    rows = []
    for sid in dict.fromkeys(table['sensor']):
        a = table[table['sensor'] == sid]
        b = truth[truth['sensor'] == sid]
        if len(b) != len(a):
            continue
        row = {'sensor': sid}
        for prefix in ('crf', 'vig'):
            for c in CHANNELS:
                col = f"{prefix}_{c}"
                diff = a[col].to_numpy() - b[col].to_numpy()
                row[f"{col}_rmse"] = float(np.sqrt(np.mean(diff ** 2)))
        rows.append(row)
    return pd.DataFrame(rows)
