"""Test-time latent optimization against a frozen Morpher, and future-frame prediction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .chamfer import chamfer_arrays
from .geometry import FlowField, PointCloud, sample_indices
from .morpher import MorpherNet, backward, forward_array, predict_flow_array
from .training import AdamState, adam_update, chamfer_loss_and_grad


@dataclass
class InferConfig:
    max_iters: int = 800
    lr_z: float = 1e-3
    rel_tol: float = 1e-6
    patience: int = 20
    n_points: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or self.patience < 1 or self.n_points < 1:
            raise ValueError("max_iters, patience and n_points must be positive")
        if self.lr_z < 0 or self.rel_tol < 0:
            raise ValueError("lr_z and rel_tol must be non-negative")


@dataclass
class PredictionResult:
    z_hat: np.ndarray
    predicted_frame: PointCloud
    correspondence: np.ndarray  # row i: predicted position of observed point i
    loss_history: List[float] = field(default_factory=list)


def _fixed_subset(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    if n >= len(points):
        return points
    return points[np.sort(sample_indices(rng, len(points), n))]


def optimize_latent(net: MorpherNet, P, Q, config: InferConfig):
    """Fit a fresh latent so that ``P + flow(P, z)`` matches ``Q``; weights stay frozen.

    Clouds larger than ``config.n_points`` are subsampled once, up front.
    Stops after ``max_iters`` evaluations or once the best loss has improved
    by less than ``rel_tol`` (relative) for ``patience`` consecutive
    iterations. Returns the best iterate and the loss at every iterate.
    """
    P = np.asarray(getattr(P, "points", P), dtype=np.float64)
    Q = np.asarray(getattr(Q, "points", Q), dtype=np.float64)
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("optimize_latent needs non-empty clouds")
    rng = np.random.default_rng(config.seed)
    z = rng.standard_normal(net.latent_dim)
    P_fit = _fixed_subset(P, config.n_points, rng)
    Q_fit = _fixed_subset(Q, config.n_points, rng)
    adam = AdamState.like([z], config.lr_z)

    history: List[float] = []
    best_loss, best_z = np.inf, z.copy()
    stall = 0
    for _ in range(config.max_iters):
        flow, tape = forward_array(net, P_fit, z)
        loss, upstream = chamfer_loss_and_grad(P_fit + flow, Q_fit)
        history.append(loss)
        if loss < best_loss:
            improvement = (best_loss - loss) / best_loss if np.isfinite(best_loss) and best_loss > 0 else np.inf
            best_loss, best_z = loss, z.copy()
        else:
            improvement = 0.0
        stall = stall + 1 if improvement < config.rel_tol else 0
        if stall >= config.patience:
            break
        _, z_grad = backward(net, tape, upstream, param_grads=False)
        adam_update(adam, [z], [z_grad])
    return best_z, history


def predict_flow(net: MorpherNet, cloud: PointCloud, z) -> FlowField:
    return FlowField(predict_flow_array(net, cloud.points, z), cloud.frame_id)


def predict_future(net: MorpherNet, P: PointCloud, Q: PointCloud, config: InferConfig) -> PredictionResult:
    """Fit the latent on ``(P, Q)`` and move ``Q`` one step further with the same latent."""
    z_hat, history = optimize_latent(net, P, Q, config)
    future = Q.points + predict_flow_array(net, Q.points, z_hat)
    predicted = PointCloud(future, Q.frame_id + 1)
    return PredictionResult(z_hat, predicted, predicted.points, history)


def fit_loss(net: MorpherNet, P, Q, z) -> float:
    """Chamfer loss of ``P`` moved by the latent ``z`` against ``Q``."""
    P = np.asarray(getattr(P, "points", P), dtype=np.float64)
    Q = np.asarray(getattr(Q, "points", Q), dtype=np.float64)
    return chamfer_arrays(P + predict_flow_array(net, P, z), Q).value
