"""One-pass evaluation: per-frame IoU, success curve, AUC, precision."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..head import box_iou

THRESHOLDS = np.arange(21) / 20.0
PRECISION_THRESHOLD = 0.2  # centre error in units of the ground-truth box size


@dataclass
class Metrics:
    ious: np.ndarray
    center_errors: np.ndarray  # pixels
    norm_center_errors: np.ndarray
    success: np.ndarray  # success rate per threshold in THRESHOLDS
    auc: float
    precision: float

    def summary(self) -> dict:
        return {"frames": int(self.ious.size), "auc": self.auc, "precision": self.precision,
                "mean_iou": float(self.ious.mean()) if self.ious.size else 0.0}


def success_curve(ious: np.ndarray) -> np.ndarray:
    """Fraction of frames with IoU >= t; at t = 0 the test is IoU > 0."""
    ious = np.asarray(ious, dtype=np.float64)
    return np.array([np.mean(ious > 0) if t == 0 else np.mean(ious >= t) for t in THRESHOLDS])


def evaluate(pred, gt) -> Metrics:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction/ground-truth length mismatch: {pred.shape} vs {gt.shape}")
    ious = box_iou(pred, gt)
    pc = (pred[:, :2] + pred[:, 2:]) / 2
    gc = (gt[:, :2] + gt[:, 2:]) / 2
    err = np.linalg.norm(pc - gc, axis=1)
    size = gt[:, 2:] - gt[:, :2]
    norm_err = np.linalg.norm((pc - gc) / size, axis=1)
    succ = success_curve(ious)
    return Metrics(ious, err, norm_err, succ, float(succ.mean()),
                   float(np.mean(norm_err <= PRECISION_THRESHOLD)))


def mean_auc(metrics: list[Metrics]) -> float:
    """Dataset AUC as the mean of per-sequence AUCs."""
    return float(np.mean([m.auc for m in metrics])) if metrics else 0.0
