"""Exact kd-tree nearest neighbours and the (non-squared) Chamfer loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .geometry import PointCloud

LEAF_SIZE = 16
COINCIDENT_EPS = 1e-12


class NNResult(NamedTuple):
    index: int
    distance: float


@numba.njit(cache=True)
def _build(points, leaf_size):
    n = points.shape[0]
    cap = 2 * (n // max(1, leaf_size // 2) + 1) + 1
    axis = np.full(cap, -1, dtype=np.int64)
    split = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    perm = np.arange(n)

    n_nodes = 1
    start[0] = 0
    end[0] = n
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        s = start[node]
        e = end[node]
        if e - s <= leaf_size:
            continue
        best_ax = 0
        best_ext = -1.0
        for d in range(3):
            lo = np.inf
            hi = -np.inf
            for k in range(s, e):
                v = points[perm[k], d]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            if hi - lo > best_ext:
                best_ext = hi - lo
                best_ax = d
        seg = perm[s:e].copy()
        keys = np.empty(e - s)
        for k in range(e - s):
            keys[k] = points[seg[k], best_ax]
        order = np.argsort(keys, kind="mergesort")
        for k in range(e - s):
            perm[s + k] = seg[order[k]]
        mid = (s + e) // 2
        axis[node] = best_ax
        split[node] = points[perm[mid], best_ax]
        left[node] = n_nodes
        right[node] = n_nodes + 1
        start[n_nodes] = s
        end[n_nodes] = mid
        start[n_nodes + 1] = mid
        end[n_nodes + 1] = e
        stack[top] = n_nodes
        stack[top + 1] = n_nodes + 1
        top += 2
        n_nodes += 2
    return axis[:n_nodes], split[:n_nodes], left[:n_nodes], right[:n_nodes], start[:n_nodes], end[:n_nodes], perm


@numba.njit(cache=True)
def _query(tpoints, perm, axis, split, left, right, start, end, queries):
    # each pushed node carries its squared plane distance; equal bounds are
    # still visited so ties resolve to the lowest index
    m = queries.shape[0]
    out_idx = np.empty(m, dtype=np.int64)
    out_d2 = np.empty(m, dtype=np.float64)
    stack = np.empty(256, dtype=np.int64)
    bound = np.empty(256, dtype=np.float64)
    for qi in range(m):
        best_d2 = np.inf
        best_i = -1
        stack[0] = 0
        bound[0] = 0.0
        top = 1
        while top > 0:
            top -= 1
            node = stack[top]
            if bound[top] > best_d2:
                continue
            ax = axis[node]
            if ax < 0:
                for k in range(start[node], end[node]):
                    dx = queries[qi, 0] - tpoints[k, 0]
                    dy = queries[qi, 1] - tpoints[k, 1]
                    dz = queries[qi, 2] - tpoints[k, 2]
                    d2 = dx * dx + dy * dy + dz * dz
                    pk = perm[k]
                    if d2 < best_d2 or (d2 == best_d2 and pk < best_i):
                        best_d2 = d2
                        best_i = pk
                continue
            diff = queries[qi, ax] - split[node]
            if diff < 0:
                near = left[node]
                far = right[node]
            else:
                near = right[node]
                far = left[node]
            stack[top] = far
            bound[top] = diff * diff
            top += 1
            stack[top] = near
            bound[top] = 0.0
            top += 1
        out_idx[qi] = best_i
        out_d2[qi] = best_d2
    return out_idx, out_d2


@dataclass(frozen=True, eq=False)
class KdTree:
    """Balanced kd-tree: median split on the widest axis, leaves of at most 16 points.

    ``tree_points`` holds the points in leaf order and ``perm`` maps each
    leaf slot back to its index in the source cloud.
    """

    tree_points: np.ndarray
    perm: np.ndarray
    axis: np.ndarray
    split: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def __len__(self) -> int:
        return self.perm.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.axis.shape[0]

    @property
    def n_leaves(self) -> int:
        return int((self.axis < 0).sum())

    def query(self, queries: np.ndarray):
        """Nearest target index and squared distance for every query row."""
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        return _query(
            self.tree_points, self.perm, self.axis, self.split,
            self.left, self.right, self.start, self.end, q,
        )


def _build_from_array(points: np.ndarray) -> KdTree:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.shape[0] == 0:
        raise ValueError("cannot build a kd-tree over an empty cloud")
    axis, split, left, right, start, end, perm = _build(pts, LEAF_SIZE)
    arrays = [np.ascontiguousarray(pts[perm]), perm, axis, split, left, right, start, end]
    for a in arrays:
        a.flags.writeable = False
    return KdTree(*arrays)


def build_kdtree(points: PointCloud) -> KdTree:
    return _build_from_array(points.points)


def nearest(tree: KdTree, query) -> NNResult:
    idx, d2 = tree.query(np.asarray(query, dtype=np.float64))
    return NNResult(int(idx[0]), float(np.sqrt(d2[0])))


def nearest_neighbors(source: np.ndarray, target: np.ndarray):
    """For each row of ``source`` the nearest row of ``target`` as (index, distance)."""
    idx, d2 = _build_from_array(target).query(source)
    return idx, np.sqrt(d2)


@dataclass(frozen=True, eq=False)
class ChamferResult:
    """Loss value plus the nearest-neighbour matches in both directions."""

    value: float
    ab_index: np.ndarray
    ab_distance: np.ndarray
    ba_index: np.ndarray
    ba_distance: np.ndarray

    @property
    def matches_ab(self):
        return [NNResult(int(i), float(d)) for i, d in zip(self.ab_index, self.ab_distance)]

    @property
    def matches_ba(self):
        return [NNResult(int(i), float(d)) for i, d in zip(self.ba_index, self.ba_distance)]


def chamfer_arrays(a: np.ndarray, b: np.ndarray) -> ChamferResult:
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Chamfer distance needs two non-empty point sets")
    ab_idx, ab_d = nearest_neighbors(a, b)
    ba_idx, ba_d = nearest_neighbors(b, a)
    value = float(ab_d.mean() + ba_d.mean())
    return ChamferResult(value, ab_idx, ab_d, ba_idx, ba_d)


def chamfer_distance(a: PointCloud, b: PointCloud) -> ChamferResult:
    return chamfer_arrays(a.points, b.points)


def chamfer_gradient_arrays(result: ChamferResult, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Subgradient of the loss w.r.t. ``a`` with the matches held fixed."""
    n_a, n_b = len(a), len(b)
    grad = np.zeros((n_a, 3))

    diff = a - b[result.ab_index]
    dist = result.ab_distance
    ok = dist >= COINCIDENT_EPS
    grad[ok] += diff[ok] / (n_a * dist[ok])[:, None]

    diff = a[result.ba_index] - b
    dist = result.ba_distance
    ok = dist >= COINCIDENT_EPS
    contrib = np.zeros((n_b, 3))
    contrib[ok] = diff[ok] / (n_b * dist[ok])[:, None]
    # unbuffered scatter-add, applied in ascending b index
    np.add.at(grad, result.ba_index, contrib)
    return grad


def chamfer_gradient(result: ChamferResult, a: PointCloud, b: PointCloud) -> np.ndarray:
    return chamfer_gradient_arrays(result, a.points, b.points)
