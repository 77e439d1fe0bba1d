"""The shape Morpher: an MLP mapping ``[point, z]`` to a 3D flow vector.

Hidden layers use softplus, the output layer is linear. The latent code is
shared by every point of a batch, so the first layer is evaluated as
``W_point @ p + (W_latent @ z + b)`` which is the same affine map as
``W @ [p, z] + b`` without materialising the concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from .geometry import FlowField, PointCloud

DEFAULT_HIDDEN_DIMS = (512, 256, 128, 64)
DEFAULT_LATENT_DIM = 256


def softplus_and_prime(x):
    """``(softplus(x), softplus'(x))`` sharing one exponential.

    With ``e = exp(-|x|)``: softplus is ``max(x, 0) + ln(1 + e)`` (never
    overflows) and its derivative, the logistic sigmoid, is ``1 / (1 + e)``
    for ``x >= 0`` and ``e / (1 + e)`` otherwise.
    """
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    one_plus = 1.0 + e
    sp = np.log1p(e)
    sp += np.maximum(x, 0.0)
    slope = np.where(x >= 0, 1.0, e)
    slope /= one_plus
    return sp, slope


def softplus(x):
    return softplus_and_prime(x)[0]


def softplus_prime(x):
    return softplus_and_prime(x)[1]


@dataclass
class LayerParams:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class MorpherNet:
    layers: List[LayerParams]
    latent_dim: int

    def __post_init__(self):
        check_dimension_chain(
            self.latent_dim, [(l.out_dim, l.in_dim, l.bias.shape) for l in self.layers]
        )

    @property
    def hidden_dims(self) -> List[int]:
        return [l.out_dim for l in self.layers[:-1]]

    def params(self) -> List[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for layer in self.layers:
            out.extend([layer.weights, layer.bias])
        return out

    def copy(self) -> "MorpherNet":
        return MorpherNet(
            [LayerParams(l.weights.copy(), l.bias.copy()) for l in self.layers], self.latent_dim
        )


def check_dimension_chain(latent_dim, shapes):
    """Validate ``(out_dim, in_dim, bias_shape)`` triples for a Morpher."""
    if latent_dim < 1:
        raise ValueError("latent_dim must be >= 1")
    if not shapes:
        raise ValueError("a Morpher needs at least one layer")
    expected_in = 3 + latent_dim
    for k, (out_dim, in_dim, bias_shape) in enumerate(shapes):
        if in_dim != expected_in:
            raise ValueError(f"layer {k} expects input dim {expected_in}, has {in_dim}")
        if tuple(bias_shape) != (out_dim,):
            raise ValueError(f"layer {k} bias shape {tuple(bias_shape)} != ({out_dim},)")
        expected_in = out_dim
    if expected_in != 3:
        raise ValueError(f"last layer must output 3 values, outputs {expected_in}")


def init_net(
    latent_dim: int = DEFAULT_LATENT_DIM,
    hidden_dims: Sequence[int] = DEFAULT_HIDDEN_DIMS,
    seed: int = 0,
) -> MorpherNet:
    """Weights uniform in +-1/sqrt(fan_in), zero biases."""
    if latent_dim < 1:
        raise ValueError("latent_dim must be >= 1")
    if len(hidden_dims) == 0:
        raise ValueError("hidden_dims must be non-empty")
    rng = np.random.default_rng(seed)
    dims = [3 + latent_dim, *hidden_dims, 3]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        layers.append(
            LayerParams(rng.uniform(-bound, bound, (fan_out, fan_in)), np.zeros(fan_out))
        )
    return MorpherNet(layers, latent_dim)


@dataclass
class ForwardTape:
    points: np.ndarray  # (N, 3)
    z: np.ndarray  # (latent_dim,)
    pre: List[np.ndarray] = field(default_factory=list)  # pre-activation per layer
    act: List[np.ndarray] = field(default_factory=list)  # input to each layer > 0
    slope: List[np.ndarray] = field(default_factory=list)  # softplus'(pre) per hidden layer

    @property
    def n_points(self) -> int:
        return self.points.shape[0]


def _check_latent(net: MorpherNet, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.shape[0] != net.latent_dim:
        raise ValueError(f"latent code has length {z.shape[0]}, net expects {net.latent_dim}")
    return z


def forward_array(net: MorpherNet, points: np.ndarray, z):
    z = _check_latent(net, z)
    x = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tape = ForwardTape(x, z.copy())
    first = net.layers[0]
    pre = x @ first.weights[:, :3].T + (first.weights[:, 3:] @ z + first.bias)
    tape.pre.append(pre)
    for layer in net.layers[1:]:
        h, slope = softplus_and_prime(pre)
        tape.act.append(h)
        tape.slope.append(slope)
        pre = h @ layer.weights.T + layer.bias
        tape.pre.append(pre)
    return pre, tape


def forward(net: MorpherNet, points: PointCloud, z):
    """Flow for every point of ``points`` plus the tape needed by :func:`backward`."""
    flows, tape = forward_array(net, points.points, z)
    return FlowField(flows, points.frame_id), tape


def backward(net: MorpherNet, tape: ForwardTape, upstream, param_grads: bool = True):
    """Reverse pass; returns ``(param_grads, z_grad)``.

    ``param_grads`` follows :meth:`MorpherNet.params` ordering (``None``
    entries when ``param_grads=False``). The latent gradient sums the
    per-point contributions since ``z`` is shared.
    """
    delta = np.asarray(upstream, dtype=np.float64)
    if delta.shape != (tape.n_points, 3):
        raise ValueError(f"upstream gradient shape {delta.shape} != {(tape.n_points, 3)}")
    n_layers = len(net.layers)
    grads = [None] * (2 * n_layers)
    for k in range(n_layers - 1, 0, -1):
        if param_grads:
            grads[2 * k] = delta.T @ tape.act[k - 1]
            grads[2 * k + 1] = delta.sum(axis=0)
        delta = (delta @ net.layers[k].weights) * tape.slope[k - 1]
    first = net.layers[0]
    summed = delta.sum(axis=0)
    if param_grads:
        grads[0] = np.concatenate([delta.T @ tape.points, np.outer(summed, tape.z)], axis=1)
        grads[1] = summed
    z_grad = first.weights[:, 3:].T @ summed
    return grads, z_grad


def predict_flow_array(net: MorpherNet, points: np.ndarray, z) -> np.ndarray:
    return forward_array(net, points, z)[0]


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    n_weights_checked: int
    n_latent_checked: int
    tol: float
    worst: str
    group_errors: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isinf(self.tol) or self.max_rel_error < self.tol)


def relative_error(analytic, numeric) -> float:
    """``|a - n| / max(|a|, |n|)`` on whole vectors (0 when both vanish)."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)


def gradient_check(
    net: MorpherNet,
    points: np.ndarray,
    z,
    loss_fn: Callable[[np.ndarray], tuple],
    h: float = 1e-6,
    tol: float = 1e-5,
    n_weights: int = 100,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``loss_fn(positions)`` maps the moved points ``points + flow`` to
    ``(loss, d loss / d positions)``. All latent entries and ``n_weights``
    randomly sampled weight/bias entries are perturbed. Errors are measured
    per group (the latent, and the sampled entries of each parameter
    tensor) as vector relative errors; entries below the finite-difference
    resolution would make a per-entry ratio meaningless.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    points = np.asarray(points, dtype=np.float64)
    z = _check_latent(net, z).copy()

    def total_loss(n, zz):
        flow, _ = forward_array(n, points, zz)
        return loss_fn(points + flow)[0]

    flow, tape = forward_array(net, points, z)
    _, upstream = loss_fn(points + flow)
    grads, z_grad = backward(net, tape, upstream)

    groups = {}
    numeric_z = np.empty_like(z)
    for i in range(z.shape[0]):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        numeric_z[i] = (total_loss(net, zp) - total_loss(net, zm)) / (2 * h)
    groups["z"] = (z_grad, numeric_z)

    rng = np.random.default_rng(seed)
    params = net.params()
    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    flat_ids = np.sort(rng.choice(total, size=min(n_weights, total), replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    trial = net.copy()
    trial_params = trial.params()
    for fid in flat_ids:
        pi = int(np.searchsorted(offsets, fid, side="right") - 1)
        local = np.unravel_index(int(fid - offsets[pi]), params[pi].shape)
        target = trial_params[pi]
        orig = target[local]
        target[local] = orig + h
        lp = total_loss(trial, z)
        target[local] = orig - h
        lm = total_loss(trial, z)
        target[local] = orig
        name = f"{'W' if pi % 2 == 0 else 'b'}{pi // 2}"
        a_list, n_list = groups.setdefault(name, ([], []))
        a_list.append(grads[pi][local])
        n_list.append((lp - lm) / (2 * h))

    group_errors = {k: relative_error(a, n) for k, (a, n) in groups.items()}
    max_abs = max(float(np.max(np.abs(np.subtract(a, n)))) for a, n in groups.values())
    worst = max(group_errors, key=group_errors.get)
    return GradCheckReport(
        group_errors[worst], max_abs, len(flat_ids), z.shape[0], tol, worst, group_errors
    )
