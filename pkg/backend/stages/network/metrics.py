# backend/stages/network/metrics.py
"""Pose-error metrics. Positions are meters in, centimeters out."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from common.errors import NetworkShapeError
from stages.network.models import PoseHeatmaps3D
from stages.network.targets import readout

PCK_THRESHOLDS_CM = (10, 20, 30, 40)


def landmark_errors_cm(predicted: Sequence[Sequence[Sequence[float]]], truth: Sequence[Sequence[Sequence[float]]]) -> np.ndarray:
    """Euclidean error per (sample, landmark) in cm, shape (S, N)."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 3 or p.shape[-1] != 3:
        raise NetworkShapeError(f"predictions {p.shape} and truth {t.shape} must both be (samples, landmarks, 3)")
    return 100.0 * np.linalg.norm(p - t, axis=-1)


def mpjpe_cm(errors_cm: np.ndarray) -> float:
    return float(np.mean(errors_cm))


def pck(errors_cm: np.ndarray, threshold_cm: float) -> float:
    """Fraction of landmarks within `threshold_cm` of the truth."""
    return float(np.mean(np.asarray(errors_cm) <= threshold_cm))


class EvalReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_samples: int
    per_landmark_cm: List[float]
    mpjpe_cm: float
    pck: Dict[int, float]


def summarize(errors_cm: np.ndarray, thresholds_cm: Sequence[int] = PCK_THRESHOLDS_CM) -> EvalReport:
    errors_cm = np.asarray(errors_cm, dtype=np.float64)
    if errors_cm.ndim != 2 or errors_cm.shape[0] == 0:
        raise NetworkShapeError(f"expected a nonempty (samples, landmarks) error table, got {errors_cm.shape}")
    return EvalReport(
        n_samples=int(errors_cm.shape[0]),
        per_landmark_cm=[float(v) for v in errors_cm.mean(axis=0)],
        mpjpe_cm=mpjpe_cm(errors_cm),
        pck={int(t): pck(errors_cm, t) for t in thresholds_cm},
    )


def score_heatmaps(
    heatmaps: Sequence[PoseHeatmaps3D], truth: Sequence[Sequence[Sequence[float]]]
) -> Tuple[EvalReport, np.ndarray, List[List[np.ndarray]]]:
    """Read every predicted heatmap out and score it against the true landmarks (meters)."""
    positions = [readout(h) for h in heatmaps]
    errors = landmark_errors_cm(positions, truth)
    return summarize(errors), errors, positions


def report_frame(report: EvalReport) -> pd.DataFrame:
    """Long-format metrics table: one row per (metric, landmark) with landmark 'all' for aggregates."""
    rows = [{"metric": "error_cm", "landmark": str(i), "value": v} for i, v in enumerate(report.per_landmark_cm)]
    rows.append({"metric": "mpjpe_cm", "landmark": "all", "value": report.mpjpe_cm})
    rows.extend({"metric": f"pck@{t}", "landmark": "all", "value": v} for t, v in sorted(report.pck.items()))
    return pd.DataFrame(rows, columns=["metric", "landmark", "value"])


def write_metrics_csv(path: Union[str, Path], report: EvalReport) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    report_frame(report).to_csv(p, index=False, float_format="%.9g")
    return p
