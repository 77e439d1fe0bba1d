import numpy as np
import pytest
from hypothesis import given, strategies as st

from motionflow.geometry import (
    DegenerateInputError,
    Episode,
    FlowField,
    NormalizeTransform,
    PointCloud,
    add_gaussian_noise,
    apply_flow,
    cut_holes,
    denormalize_episode,
    make_partial,
    normalize_episode,
    sample_points,
)
from motionflow.synth import MotionFamily, gen_episode
from strategies import point_arrays


def test_point_cloud_rejects_non_finite():
    with pytest.raises(ValueError):
        PointCloud([[0.0, np.nan, 0.0]])


def test_point_cloud_is_read_only():
    c = PointCloud([[1.0, 2.0, 3.0]])
    with pytest.raises(ValueError):
        c.points[0, 0] = 5.0


def test_episode_needs_three_frames():
    c = PointCloud([[0.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        Episode((c, c))


def test_episode_checks_flow_lengths():
    c = PointCloud(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        Episode((c, c, c), (FlowField.zeros(2), FlowField.zeros(3)))


class TestApplyFlow:
    def test_single_point(self):
        out = apply_flow(PointCloud([[0.0, 0.0, 0.0]], frame_id=4), FlowField([[1.0, 2.0, 3.0]]))
        np.testing.assert_array_equal(out.points, [[1.0, 2.0, 3.0]])
        assert out.frame_id == 5

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            apply_flow(PointCloud(np.zeros((2, 3))), FlowField.zeros(3))

    def test_synthetic_gt_flow_is_exact(self):
        ep = gen_episode(MotionFamily("rigid_rotation", step=0.3, axis=(1, 2, 3)), 64, seed=3)
        moved = apply_flow(ep.frames[0], ep.gt_flows[0])
        np.testing.assert_array_equal(moved.points, ep.frames[1].points)

    @given(point_arrays())
    def test_zero_flow_is_identity(self, pts):
        c = PointCloud(pts)
        np.testing.assert_array_equal(apply_flow(c, FlowField.zeros(len(c))).points, c.points)

    @given(point_arrays(), st.integers(0, 2**32 - 1))
    def test_composition_is_flow_addition(self, pts, seed):
        r = np.random.default_rng(seed)
        c = PointCloud(pts)
        f1 = FlowField(r.normal(size=pts.shape))
        f2 = FlowField(r.normal(size=pts.shape))
        two_steps = apply_flow(apply_flow(c, f1), f2).points
        one_step = apply_flow(c, f1 + f2).points
        np.testing.assert_allclose(two_steps, one_step, rtol=0, atol=1e-12 * max(1.0, np.abs(pts).max()))


class TestSamplePoints:
    def test_full_draw_is_permutation(self, rng):
        c = PointCloud(rng.normal(size=(50, 3)))
        s = sample_points(c, 50, seed=1)
        assert sorted(map(tuple, s.points)) == sorted(map(tuple, c.points))

    def test_single_point(self):
        s = sample_points(PointCloud([[1.0, 2.0, 3.0]]), 1, seed=0)
        np.testing.assert_array_equal(s.points, [[1.0, 2.0, 3.0]])

    def test_deterministic(self, rng):
        c = PointCloud(rng.normal(size=(30, 3)))
        assert sample_points(c, 20, 9).points.tobytes() == sample_points(c, 20, 9).points.tobytes()

    def test_with_replacement_when_oversampling(self, rng):
        c = PointCloud(rng.normal(size=(5, 3)))
        assert len(sample_points(c, 12, 0)) == 12

    def test_errors(self):
        with pytest.raises(ValueError):
            sample_points(PointCloud(np.zeros((0, 3))), 1, 0)
        with pytest.raises(ValueError):
            sample_points(PointCloud(np.zeros((3, 3))), 0, 0)


def _episode(frame0, others=None):
    f0 = PointCloud(frame0, 0)
    others = others or [frame0, frame0]
    return Episode((f0, PointCloud(others[0], 1), PointCloud(others[1], 2)), None, "e")


class TestNormalize:
    def test_identity_when_already_normalized(self):
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0.5, 0], [0, -0.5, 0]])
        ep, tf = normalize_episode(_episode(pts))
        np.testing.assert_allclose(tf.translation, 0.0)
        assert tf.scale == 1.0
        np.testing.assert_allclose(ep.frames[0].points, pts)

    def test_two_points(self):
        ep, tf = normalize_episode(_episode(np.array([[0.0, 0, 0], [2.0, 0, 0]])))
        np.testing.assert_allclose(tf.translation, [1.0, 0, 0])
        assert tf.scale == 1.0
        np.testing.assert_allclose(ep.frames[0].points, [[-1.0, 0, 0], [1.0, 0, 0]])

    def test_degenerate_single_point(self):
        ep, tf = normalize_episode(_episode(np.array([[3.0, -2.0, 7.0]])))
        assert tf.scale == 1.0
        np.testing.assert_allclose(ep.frames[0].points, [[0.0, 0.0, 0.0]])

    def test_same_transform_on_all_frames_and_flows(self, rng):
        ep = gen_episode(MotionFamily("articulated_hinge", step=0.4), 40, seed=2)
        shifted = Episode(
            tuple(PointCloud(f.points * 3.0 + 5.0, k) for k, f in enumerate(ep.frames)),
            tuple(FlowField(f.vectors * 3.0) for f in ep.gt_flows),
        )
        norm, tf = normalize_episode(shifted)
        for k in range(2):
            np.testing.assert_allclose(
                norm.frames[k].points + norm.gt_flows[k].vectors, norm.frames[k + 1].points, atol=1e-12
            )

    @given(point_arrays(min_size=2), st.integers(0, 1000))
    def test_centroid_radius_and_round_trip(self, pts, seed):
        r = np.random.default_rng(seed)
        radius = np.sqrt(((pts - pts.mean(axis=0)) ** 2).sum(axis=1)).max()
        others = [pts + r.normal(size=pts.shape), pts * 0.5]
        ep = _episode(pts, others)
        norm, tf = normalize_episode(ep)
        if radius >= 1e-6:
            np.testing.assert_allclose(norm.frames[0].points.mean(axis=0), 0.0, atol=1e-9)
            r_max = np.sqrt((norm.frames[0].points ** 2).sum(axis=1)).max()
            assert abs(r_max - 1.0) < 1e-9
        back = denormalize_episode(norm, tf)
        for a, b in zip(back.frames, ep.frames):
            np.testing.assert_allclose(a.points, b.points, atol=1e-9 * max(1.0, np.abs(pts).max()))

    def test_transform_requires_positive_scale(self):
        with pytest.raises(ValueError):
            NormalizeTransform(np.zeros(3), 0.0)


class TestNoise:
    def test_zero_sigma_identity(self, rng):
        c = PointCloud(rng.normal(size=(10, 3)))
        assert add_gaussian_noise(c, 0.0, 1) == c

    def test_empirical_std(self, rng):
        c = PointCloud(rng.normal(size=(10_000, 3)))
        d = add_gaussian_noise(c, 0.02, seed=5).points - c.points
        for axis_std in d.std(axis=0):
            assert abs(axis_std - 0.02) < 0.1 * 0.02

    def test_deterministic(self, rng):
        c = PointCloud(rng.normal(size=(10, 3)))
        assert add_gaussian_noise(c, 0.1, 3) == add_gaussian_noise(c, 0.1, 3)

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            add_gaussian_noise(PointCloud(np.zeros((1, 3))), -1.0, 0)


class TestHoles:
    def test_no_holes(self, rng):
        c = PointCloud(rng.normal(size=(10, 3)))
        assert cut_holes(c, 0, 0.5, 0) == c

    def test_ball_removal(self):
        c = PointCloud([[0.0, 0, 0], [10.0, 0, 0]])
        np.testing.assert_array_equal(cut_holes(c, 1, 1.0, 0, centers=[0]).points, [[10.0, 0, 0]])

    def test_all_removed_raises(self):
        with pytest.raises(DegenerateInputError):
            cut_holes(PointCloud([[0.0, 0, 0], [0.1, 0, 0]]), 1, 1.0, 0)

    @given(st.integers(0, 5), st.floats(0.01, 0.5), st.integers(0, 100))
    def test_never_grows(self, n_holes, radius, seed):
        c = PointCloud(np.random.default_rng(seed).normal(size=(60, 3)))
        try:
            out = cut_holes(c, n_holes, radius, seed)
        except DegenerateInputError:
            return
        assert len(out) <= len(c)


class TestPartial:
    def test_tiny_fraction_keeps_everything(self, rng):
        c = PointCloud(rng.normal(size=(10, 3)))
        assert make_partial(c, 0.05, 0) == c

    def test_two_point_plane_cut(self):
        c = PointCloud([[-1.0, 0, 0], [1.0, 0, 0]])
        out = make_partial(c, 0.5, 0, normal=(1.0, 0.0, 0.0))
        np.testing.assert_array_equal(out.points, [[-1.0, 0, 0]])

    @given(st.integers(1, 80), st.floats(0.01, 0.99), st.integers(0, 1000))
    def test_count_contract(self, n, fraction, seed):
        c = PointCloud(np.random.default_rng(seed).normal(size=(n, 3)))
        out = make_partial(c, fraction, seed)
        assert len(out) == n - int(np.floor(fraction * n))

    def test_deterministic(self, rng):
        c = PointCloud(rng.normal(size=(40, 3)))
        assert make_partial(c, 0.3, 4) == make_partial(c, 0.3, 4)

    def test_fraction_bounds(self):
        with pytest.raises(ValueError):
            make_partial(PointCloud(np.zeros((3, 3))), 1.0, 0)
