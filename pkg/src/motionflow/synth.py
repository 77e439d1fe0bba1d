"""Synthetic deforming shapes with exact ground-truth flows.

Three motion families are available:

* ``rigid_rotation``: a lumpy Gaussian-blob shape rotating about ``axis``
  (through its centroid) by ``step`` radians per frame.
* ``bending_sheet``: a jittered square grid rolled onto a cylinder whose
  curvature grows by ``step`` per frame; the roll axis lies in the sheet
  plane at angle ``axis_angle``. Bending is isometric, so arc length along
  the sheet is preserved.
* ``articulated_hinge``: a blob cut in two by the plane ``x = 0``; the
  ``x > 0`` part rotates by ``step`` per frame about the hinge line through
  the origin along ``axis``.

Motion parameters are constant within an episode, so frame 2 follows from
frame 1 exactly as frame 1 follows from frame 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .geometry import Episode, FlowField, PointCloud

KINDS = ("rigid_rotation", "bending_sheet", "articulated_hinge")
MAX_STEP = np.pi / 4


def rotation_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a (normalized) axis."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


@dataclass(frozen=True)
class MotionFamily:
    kind: str
    step: float = 0.2
    axis: tuple = (0.0, 0.0, 1.0)
    axis_angle: float = 0.0
    phase: float = 0.0
    base_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown motion family {self.kind!r}; expected one of {KINDS}")
        if not 0.0 <= self.step <= MAX_STEP:
            raise ValueError(f"step must lie in [0, pi/4], got {self.step}")
        axis = np.asarray(self.axis, dtype=np.float64)
        if axis.shape != (3,) or not np.linalg.norm(axis) > 0:
            raise ValueError("axis must be a non-zero 3-vector")
        object.__setattr__(self, "axis", tuple(float(a) for a in axis / np.linalg.norm(axis)))
        if self.phase < 0:
            raise ValueError("phase must be >= 0")


def random_family(kind: str, rng: np.random.Generator, step_range=(0.1, 0.3)) -> MotionFamily:
    """Family with a uniformly random axis and step drawn from ``step_range``."""
    lo, hi = step_range
    axis = rng.standard_normal(3)
    return MotionFamily(
        kind,
        step=float(rng.uniform(lo, hi)),
        axis=tuple(axis / np.linalg.norm(axis)),
        axis_angle=float(rng.uniform(0.0, np.pi)),
        base_seed=int(rng.integers(0, 2**31 - 1)),
    )


def _blob_shape(rng: np.random.Generator, n: int) -> np.ndarray:
    n_lobes = 4
    centers = rng.normal(0.0, 0.5, (n_lobes, 3))
    scales = rng.uniform(0.08, 0.25, (n_lobes, 3))
    rots = [rotation_matrix(rng.standard_normal(3), rng.uniform(0, np.pi)) for _ in range(n_lobes)]
    lobe = rng.integers(0, n_lobes, n)
    local = rng.standard_normal((n, 3)) * scales[lobe]
    pts = np.einsum("nij,nj->ni", np.asarray(rots)[lobe], local) + centers[lobe]
    return pts - pts.mean(axis=0)


def _sheet_shape(rng: np.random.Generator, n: int) -> np.ndarray:
    side = int(np.ceil(np.sqrt(n)))
    u = np.linspace(-1.0, 1.0, side)
    gx, gy = np.meshgrid(u, u, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    grid = grid[np.sort(rng.permutation(len(grid))[:n])]
    grid = grid + rng.uniform(-0.25, 0.25, grid.shape) * (2.0 / (side - 1))
    return np.concatenate([grid, np.zeros((n, 1))], axis=1)


def base_shape(family: MotionFamily, n_points: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([family.base_seed, seed])
    if family.kind == "bending_sheet":
        return _sheet_shape(rng, n_points)
    return _blob_shape(rng, n_points)


def deform(family: MotionFamily, base: np.ndarray, t: float) -> np.ndarray:
    """Positions of ``base`` at (possibly fractional) phase ``t``."""
    if family.kind == "rigid_rotation":
        return base @ rotation_matrix(family.axis, t * family.step).T
    if family.kind == "articulated_hinge":
        out = base.copy()
        moving = base[:, 0] > 0
        out[moving] = base[moving] @ rotation_matrix(family.axis, t * family.step).T
        return out
    # bending_sheet: coordinate across the roll axis is wrapped onto a circle
    kappa = t * family.step
    c, s = np.cos(family.axis_angle), np.sin(family.axis_angle)
    across = base[:, 0] * c + base[:, 1] * s
    along = -base[:, 0] * s + base[:, 1] * c
    if abs(kappa) < 1e-12:
        a_new, h = across, np.zeros_like(across)
    else:
        a_new = np.sin(kappa * across) / kappa
        h = (1.0 - np.cos(kappa * across)) / kappa
    return np.stack([a_new * c - along * s, a_new * s + along * c, base[:, 2] + h], axis=1)


def gen_episode(
    family: MotionFamily,
    n_points: int,
    seed: int,
    resample: bool = False,
    episode_id: str = "",
) -> Episode:
    """Three frames at phases ``phase, phase + 1, phase + 2`` of one base shape.

    With ``resample`` each frame keeps an independent random subset (drawn
    with replacement) of the deformed base, so frames no longer correspond
    point-to-point; ground-truth flows are then omitted.
    """
    if n_points < 8:
        raise ValueError("n_points must be >= 8")
    base = base_shape(family, n_points, seed)
    pos = [deform(family, base, family.phase + k) for k in range(3)]
    ep_id = episode_id or f"{family.kind}-{seed}"
    if resample:
        rng = np.random.default_rng([family.base_seed, seed, 1])
        frames = tuple(PointCloud(p[rng.integers(0, n_points, n_points)], k) for k, p in enumerate(pos))
        return Episode(frames, None, ep_id)
    # later frames are accumulated from the flows so applying them is exact
    flows = [pos[k + 1] - pos[k] for k in range(2)]
    frame_pts = [pos[0], pos[0] + flows[0]]
    frame_pts.append(frame_pts[1] + flows[1])
    frames = tuple(PointCloud(p, k) for k, p in enumerate(frame_pts))
    return Episode(frames, tuple(FlowField(f, k) for k, f in enumerate(flows)), ep_id)


def gen_dataset(
    families: Sequence[MotionFamily],
    episodes_per_family: int,
    n_points: int,
    seed: int,
    resample: bool = False,
) -> List[Episode]:
    """``episodes_per_family`` episodes of each family with consecutive seeds.

    Episode ``e`` of family ``f`` uses seed ``seed + f * episodes_per_family + e``
    and is named ``{kind}-f{f:03d}-e{e:03d}``.
    """
    if len(families) == 0:
        raise ValueError("need at least one motion family")
    if episodes_per_family < 1:
        raise ValueError("episodes_per_family must be >= 1")
    out = []
    for f, fam in enumerate(families):
        for e in range(episodes_per_family):
            ep_seed = seed + f * episodes_per_family + e
            out.append(
                gen_episode(fam, n_points, ep_seed, resample, f"{fam.kind}-f{f:03d}-e{e:03d}")
            )
    return out


def random_dataset(
    kind: str,
    n_episodes: int,
    n_points: int,
    seed: int,
    step_range=(0.1, 0.3),
) -> List[Episode]:
    """One freshly drawn family per episode (random axis and step)."""
    rng = np.random.default_rng([seed, 7])
    families = [random_family(kind, rng, step_range) for _ in range(n_episodes)]
    return gen_dataset(families, 1, n_points, seed)
