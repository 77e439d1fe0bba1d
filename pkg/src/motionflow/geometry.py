"""Point cloud types, sampling, normalization and input corruption."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class DegenerateInputError(ValueError):
    """Raised when an operation would leave a cloud with no points."""


def _as_points(points) -> np.ndarray:
    arr = np.array(points, dtype=np.float64, copy=True)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) array of points, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("point coordinates must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Ordered 3D points; row ``i`` keeps its identity across operations."""

    points: np.ndarray
    frame_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))
        if self.frame_id < 0:
            raise ValueError("frame_id must be >= 0")

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return self.frame_id == other.frame_id and np.array_equal(self.points, other.points)

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.frame_id)


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-point displacements aligned with a source cloud."""

    vectors: np.ndarray
    source_frame_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "vectors", _as_points(self.vectors))

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __add__(self, other: "FlowField") -> "FlowField":
        if len(self) != len(other):
            raise ValueError("flow fields must have equal length to be added")
        return FlowField(self.vectors + other.vectors, self.source_frame_id)

    @classmethod
    def zeros(cls, n: int, source_frame_id: int = 0) -> "FlowField":
        return cls(np.zeros((n, 3)), source_frame_id)


@dataclass(frozen=True)
class Episode:
    frames: tuple
    gt_flows: Optional[tuple] = None
    episode_id: str = ""

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) != 3:
            raise ValueError(f"an episode has exactly 3 frames, got {len(frames)}")
        object.__setattr__(self, "frames", frames)
        if self.gt_flows is not None:
            flows = tuple(self.gt_flows)
            if len(flows) != 2:
                raise ValueError("an episode carries exactly 2 ground-truth flows")
            for k, flow in enumerate(flows):
                if len(flow) != len(frames[k]):
                    raise ValueError(
                        f"gt_flows[{k}] has {len(flow)} vectors but frame {k} has {len(frames[k])} points"
                    )
            object.__setattr__(self, "gt_flows", flows)

    def pairs(self):
        """The two ordered frame pairs (0, 1) and (1, 2)."""
        return [(self.frames[0], self.frames[1]), (self.frames[1], self.frames[2])]


@dataclass(frozen=True)
class NormalizeTransform:
    """``normalized = (x - translation) * scale``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        t.flags.writeable = False
        object.__setattr__(self, "translation", t)
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def apply(self, cloud: PointCloud) -> PointCloud:
        return cloud.with_points((cloud.points - self.translation) * self.scale)

    def invert(self, cloud: PointCloud) -> PointCloud:
        return cloud.with_points(cloud.points / self.scale + self.translation)

    def apply_flow(self, flow: FlowField) -> FlowField:
        return FlowField(flow.vectors * self.scale, flow.source_frame_id)

    def invert_flow(self, flow: FlowField) -> FlowField:
        return FlowField(flow.vectors / self.scale, flow.source_frame_id)


def apply_flow(cloud: PointCloud, flow: FlowField) -> PointCloud:
    if len(cloud) != len(flow):
        raise ValueError(f"flow has {len(flow)} vectors but cloud has {len(cloud)} points")
    return PointCloud(cloud.points + flow.vectors, cloud.frame_id + 1)


def sample_points(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(cloud) == 0:
        raise ValueError("cannot sample from an empty cloud")
    rng = np.random.default_rng(seed)
    idx = sample_indices(rng, len(cloud), n)
    return cloud.with_points(cloud.points[idx])


def sample_indices(rng: np.random.Generator, size: int, n: int) -> np.ndarray:
    """Without replacement when ``n <= size``, with replacement otherwise."""
    if n <= size:
        return rng.permutation(size)[:n]
    return rng.integers(0, size, n)


def fit_normalization(cloud: PointCloud) -> NormalizeTransform:
    """Center on the centroid and scale the farthest point to radius 1."""
    if len(cloud) == 0:
        raise ValueError("cannot normalize an empty cloud")
    centroid = cloud.points.mean(axis=0)
    radius = np.sqrt(((cloud.points - centroid) ** 2).sum(axis=1)).max()
    scale = 1.0 if radius < 1e-9 else 1.0 / radius
    return NormalizeTransform(centroid, scale)


def normalize_episode(ep: Episode):
    """Normalize all frames with the transform fitted on frame 0.

    Returns ``(normalized_episode, transform)``. Ground-truth flows are scaled
    but not translated.
    """
    for k, frame in enumerate(ep.frames):
        if len(frame) == 0:
            raise ValueError(f"frame {k} is empty")
    tf = fit_normalization(ep.frames[0])
    frames = tuple(tf.apply(f) for f in ep.frames)
    flows = None
    if ep.gt_flows is not None:
        flows = tuple(tf.apply_flow(f) for f in ep.gt_flows)
    return Episode(frames, flows, ep.episode_id), tf


def denormalize_episode(ep: Episode, tf: NormalizeTransform) -> Episode:
    frames = tuple(tf.invert(f) for f in ep.frames)
    flows = None
    if ep.gt_flows is not None:
        flows = tuple(tf.invert_flow(f) for f in ep.gt_flows)
    return Episode(frames, flows, ep.episode_id)


def add_gaussian_noise(cloud: PointCloud, sigma: float, seed: int) -> PointCloud:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return cloud
    rng = np.random.default_rng(seed)
    return cloud.with_points(cloud.points + rng.normal(0.0, sigma, cloud.points.shape))


def cut_holes(
    cloud: PointCloud,
    n_holes: int,
    radius: float,
    seed: int,
    centers: Optional[Sequence[int]] = None,
) -> PointCloud:
    """Remove every point within ``radius`` of randomly chosen cloud points.

    ``centers`` pins the hole centers to given point indices instead of
    drawing them.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_holes < 0:
        raise ValueError("n_holes must be >= 0")
    if centers is None:
        if n_holes == 0:
            return cloud
        rng = np.random.default_rng(seed)
        centers = rng.choice(len(cloud), size=min(n_holes, len(cloud)), replace=False)
    centers = np.asarray(centers, dtype=np.int64)
    if centers.size == 0:
        return cloud
    pts = cloud.points
    keep = np.ones(len(cloud), dtype=bool)
    for c in centers:
        keep &= ((pts - pts[c]) ** 2).sum(axis=1) > radius * radius
    if not keep.any():
        raise DegenerateInputError("cutting holes removed every point")
    return cloud.with_points(pts[keep])


def make_partial(
    cloud: PointCloud,
    fraction: float,
    seed: int,
    normal: Optional[Sequence[float]] = None,
) -> PointCloud:
    """Drop the ``floor(fraction * n)`` points farthest along a random plane normal.

    The plane passes through the centroid; ``normal`` overrides the random
    direction. Original point order is preserved among the survivors.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    n_drop = int(np.floor(fraction * len(cloud)))
    if n_drop == 0:
        return cloud
    if normal is None:
        rng = np.random.default_rng(seed)
        normal = rng.normal(size=3)
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    signed = (cloud.points - cloud.points.mean(axis=0)) @ normal
    order = np.argsort(signed, kind="stable")
    keep = np.sort(order[: len(cloud) - n_drop])
    return cloud.with_points(cloud.points[keep])
