"""Joint optimization of the Morpher weights and per-pair latent codes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .chamfer import chamfer_arrays, chamfer_gradient_arrays
from .geometry import Episode, sample_indices
from .morpher import (
    DEFAULT_HIDDEN_DIMS,
    DEFAULT_LATENT_DIM,
    MorpherNet,
    backward,
    forward_array,
    init_net,
)

log = logging.getLogger(__name__)

# independent RNG streams derived from one seed
_STREAM_NET, _STREAM_LATENT, _STREAM_ORDER, _STREAM_SAMPLE = range(4)


@dataclass
class AdamState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def like(cls, params: Sequence[np.ndarray], lr: float, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr, **kw)


def adam_update(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]):
    """One bias-corrected Adam step, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must have the same length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != m.shape:
            raise ValueError(f"shape mismatch: param {np.shape(p)}, grad {np.shape(g)}, state {m.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(v / bc2)
        denom += state.eps
        p -= (state.lr / bc1) * m / denom
    return params


@dataclass
class TrainConfig:
    steps: int = 2000
    lr_theta: float = 1e-4
    lr_z: float = 1e-3
    latent_dim: int = DEFAULT_LATENT_DIM
    hidden_dims: tuple = DEFAULT_HIDDEN_DIMS
    n_points: int = 2048
    lambda_z: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.steps < 0 or self.latent_dim < 1 or self.n_points < 1:
            raise ValueError("steps, latent_dim and n_points must be positive")
        if self.lr_theta < 0 or self.lr_z < 0 or self.lambda_z < 0:
            raise ValueError("learning rates and lambda_z must be non-negative")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            raise ValueError("hidden_dims must be a non-empty list of positive sizes")


@dataclass
class LatentEntry:
    z: np.ndarray
    adam: AdamState


@dataclass
class LatentStore:
    latent_dim: int
    entries: Dict[str, LatentEntry] = field(default_factory=dict)

    def init_codes(self, pair_ids: Sequence[str], seed: int, lr: float):
        """Draw ``z ~ N(0, 1)`` for each id from one seeded stream, in the given order."""
        rng = np.random.default_rng([seed, _STREAM_LATENT])
        for pid in pair_ids:
            z = rng.standard_normal(self.latent_dim)
            self.entries[pid] = LatentEntry(z, AdamState.like([z], lr))

    def __getitem__(self, pair_id: str) -> np.ndarray:
        return self.entries[pair_id].z

    def __contains__(self, pair_id: str) -> bool:
        return pair_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return ((k, e.z) for k, e in self.entries.items())


def pair_id(episode_id: str, k: int) -> str:
    return f"{episode_id}/{k}{k + 1}"


def chamfer_loss_and_grad(moved: np.ndarray, target: np.ndarray):
    res = chamfer_arrays(moved, target)
    return res.value, chamfer_gradient_arrays(res, moved, target)


def train_step(net: MorpherNet, z, pair, lambda_z: float = 0.0):
    """Loss and gradients for one frame pair ``(P, Q)`` given as (N, 3) arrays.

    Returns ``(loss, param_grads, z_grad)``.
    """
    P, Q = (np.asarray(c.points if hasattr(c, "points") else c, dtype=np.float64) for c in pair)
    z = np.asarray(z, dtype=np.float64)
    flow, tape = forward_array(net, P, z)
    moved = P + flow
    loss, upstream = chamfer_loss_and_grad(moved, Q)
    param_grads, z_grad = backward(net, tape, upstream)
    if lambda_z > 0:
        loss += lambda_z * float(z @ z)
        z_grad = z_grad + 2.0 * lambda_z * z
    return loss, param_grads, z_grad


def dataset_pairs(dataset: Sequence[Episode]):
    """Ordered ``(pair_id, P, Q)`` for both pairs of every episode."""
    out = []
    for ep in dataset:
        for k, (p, q) in enumerate(ep.pairs()):
            out.append((pair_id(ep.episode_id, k), p.points, q.points))
    ids = [pid for pid, _, _ in out]
    if len(set(ids)) != len(ids):
        raise ValueError("episode ids must be unique within a dataset")
    return out


def train(
    dataset: Sequence[Episode],
    config: TrainConfig,
    net: Optional[MorpherNet] = None,
    progress: Optional[Callable[[int, float], None]] = None,
    progress_every: int = 100,
):
    """Fit the Morpher and one latent code per ordered frame pair.

    Each episode contributes its pairs (frame0, frame1) and (frame1, frame2).
    Returns ``(net, store, loss_history)``.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    return train_pairs(dataset_pairs(dataset), config, net, progress, progress_every)


def train_pairs(
    pairs: Sequence[tuple],
    config: TrainConfig,
    net: Optional[MorpherNet] = None,
    progress: Optional[Callable[[int, float], None]] = None,
    progress_every: int = 100,
):
    """Training loop over explicit ``(pair_id, P, Q)`` triples.

    Pairs are visited in a freshly shuffled order each epoch; every visit
    resamples ``n_points`` from both frames and takes one Adam step on the
    weights and on that pair's latent.
    """
    if len(pairs) == 0:
        raise ValueError("cannot train on an empty dataset")
    if net is None:
        net = init_net(config.latent_dim, config.hidden_dims, seed=config.seed)
    elif net.latent_dim != config.latent_dim:
        raise ValueError(f"net latent_dim {net.latent_dim} != config latent_dim {config.latent_dim}")
    store = LatentStore(config.latent_dim)
    store.init_codes([pid for pid, _, _ in pairs], config.seed, config.lr_z)
    theta_adam = AdamState.like(net.params(), config.lr_theta)

    order_rng = np.random.default_rng([config.seed, _STREAM_ORDER])
    sample_rng = np.random.default_rng([config.seed, _STREAM_SAMPLE])
    history = []
    order: List[int] = []
    for step in range(config.steps):
        if not order:
            order = list(order_rng.permutation(len(pairs))[::-1])
        pid, P, Q = pairs[order.pop()]
        p_idx = sample_indices(sample_rng, len(P), config.n_points)
        q_idx = sample_indices(sample_rng, len(Q), config.n_points)
        entry = store.entries[pid]
        loss, grads, z_grad = train_step(net, entry.z, (P[p_idx], Q[q_idx]), config.lambda_z)
        adam_update(theta_adam, net.params(), grads)
        adam_update(entry.adam, [entry.z], [z_grad])
        history.append(loss)
        if progress is not None and (step + 1) % progress_every == 0:
            progress(step + 1, loss)
    return net, store, history
