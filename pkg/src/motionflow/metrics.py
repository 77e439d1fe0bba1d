"""Evaluation metrics for predicted frames."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chamfer import chamfer_distance
from .geometry import PointCloud

DEFAULT_THRESHOLDS = tuple(np.round(np.arange(21) * 0.01, 2))


@dataclass(frozen=True)
class CmaCurve:
    thresholds: np.ndarray
    accuracies: np.ndarray

    def at(self, delta: float) -> float:
        i = int(np.flatnonzero(np.isclose(self.thresholds, delta))[0])
        return float(self.accuracies[i])


def _aligned_errors(pred, gt) -> np.ndarray:
    a = np.asarray(getattr(pred, "points", pred), dtype=np.float64)
    b = np.asarray(getattr(gt, "points", gt), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"aligned clouds differ in size: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0:
        raise ValueError("metrics need non-empty clouds")
    return np.sqrt(((a - b) ** 2).sum(axis=1))


def eval_chamfer(pred: PointCloud, gt: PointCloud) -> float:
    return chamfer_distance(pred, gt).value


def correspondence_l2(pred_positions, gt_positions) -> float:
    """Mean Euclidean distance between index-aligned points."""
    return float(_aligned_errors(pred_positions, gt_positions).mean())


def cma_from_errors(errors, thresholds=DEFAULT_THRESHOLDS) -> CmaCurve:
    th = np.asarray(thresholds, dtype=np.float64)
    if th.ndim != 1 or np.any(th < 0) or np.any(np.diff(th) < 0):
        raise ValueError("thresholds must be a non-negative ascending sequence")
    err = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if err.size == 0:
        raise ValueError("no errors to accumulate")
    counts = np.searchsorted(err, th, side="right")
    return CmaCurve(th, counts / err.size)


def cumulative_matching_accuracy(pred_positions, gt_positions, thresholds=DEFAULT_THRESHOLDS) -> CmaCurve:
    """Fraction of points within distance ``delta`` (inclusive) of their ground truth."""
    return cma_from_errors(_aligned_errors(pred_positions, gt_positions), thresholds)
