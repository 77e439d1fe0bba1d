import numpy as np
import pytest
from hypothesis import given, strategies as st

from motionflow.chamfer import chamfer_distance
from motionflow.geometry import PointCloud
from motionflow.metrics import (
    DEFAULT_THRESHOLDS,
    cma_from_errors,
    correspondence_l2,
    cumulative_matching_accuracy,
    eval_chamfer,
)
from strategies import point_arrays


def test_default_grid():
    assert len(DEFAULT_THRESHOLDS) == 21 and DEFAULT_THRESHOLDS[0] == 0.0 and DEFAULT_THRESHOLDS[-1] == 0.2


def test_chamfer_delegates(rng):
    a, b = PointCloud(rng.normal(size=(10, 3))), PointCloud(rng.normal(size=(12, 3)))
    assert eval_chamfer(a, b) == chamfer_distance(a, b).value
    assert eval_chamfer(a, a) == 0.0


def test_correspondence_examples():
    assert correspondence_l2(PointCloud([[1.0, 2, 3]]), PointCloud([[1.0, 2, 3]])) == 0.0
    assert abs(correspondence_l2(PointCloud([[0.3, 0, 0]]), PointCloud([[0.0, 0, 0]])) - 0.3) < 1e-15
    with pytest.raises(ValueError):
        correspondence_l2(PointCloud(np.zeros((2, 3))), PointCloud(np.zeros((3, 3))))


def test_cma_hand_count():
    pred = PointCloud([[0.0, 0, 0], [0.5, 0, 0]])
    gt = PointCloud([[0.0, 0, 0], [0.0, 0, 0]])
    curve = cumulative_matching_accuracy(pred, gt, [0.1, 1.0])
    np.testing.assert_array_equal(curve.accuracies, [0.5, 1.0])
    assert curve.at(0.1) == 0.5


def test_cma_threshold_is_inclusive():
    assert cma_from_errors([0.25, 0.5], [0.25]).accuracies[0] == 0.5


def test_cma_identical_inputs(rng):
    c = PointCloud(rng.normal(size=(20, 3)))
    assert (cumulative_matching_accuracy(c, c).accuracies == 1.0).all()


def test_cma_errors():
    with pytest.raises(ValueError):
        cumulative_matching_accuracy(PointCloud(np.zeros((2, 3))), PointCloud(np.zeros((1, 3))))
    with pytest.raises(ValueError):
        cma_from_errors([0.1], [0.2, 0.1])
    with pytest.raises(ValueError):
        cma_from_errors([0.1], [-0.1])


@given(point_arrays(), st.integers(0, 10_000))
def test_cma_monotone_bounded_and_complete(pts, seed):
    gt = pts + np.random.default_rng(seed).normal(scale=0.1, size=pts.shape)
    curve = cumulative_matching_accuracy(pts, gt)
    acc = curve.accuracies
    assert (np.diff(acc) >= 0).all() and (acc >= 0).all() and (acc <= 1).all()
    max_err = np.sqrt(((pts - gt) ** 2).sum(axis=1)).max()
    assert cma_from_errors(np.sqrt(((pts - gt) ** 2).sum(axis=1)), [max_err]).accuracies[0] == 1.0


@given(point_arrays(), st.integers(0, 10_000))
def test_correspondence_zero_iff_identical(pts, seed):
    other = pts.copy()
    assert correspondence_l2(pts, other) == 0.0
    other[np.random.default_rng(seed).integers(len(pts))] += 0.5
    assert correspondence_l2(pts, other) > 0.0


@given(point_arrays(), point_arrays(), st.integers(0, 10_000))
def test_translation_invariance(a, b, seed):
    shift = np.random.default_rng(seed).integers(-8, 8, size=3).astype(np.float64)
    n = min(len(a), len(b))
    pa, pb = PointCloud(a[:n]), PointCloud(b[:n])
    qa, qb = PointCloud(a[:n] + shift), PointCloud(b[:n] + shift)
    assert abs(eval_chamfer(pa, pb) - eval_chamfer(qa, qb)) < 1e-12
    assert abs(correspondence_l2(pa, pb) - correspondence_l2(qa, qb)) < 1e-12
    np.testing.assert_array_equal(
        cumulative_matching_accuracy(pa, pb).accuracies, cumulative_matching_accuracy(qa, qb).accuracies
    )
