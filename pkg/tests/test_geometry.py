import math

import numpy as np
import pytest

from stereotrack.geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    GeometryError,
    ObjectState,
    StereoRig,
    alpha_from_theta,
    back_project,
    bev_corners,
    box_to_box2d,
    centroid_distance,
    coarse_depth,
    iou2d,
    iou3d,
    project,
    rotation_about_y,
    theta_from_alpha,
    wrap_angle,
)

INTR = CameraIntrinsics(fx=700.0, fy=700.0, cx=600.0, cy=180.0, width=1200, height=370)


def monte_carlo_iou3d(a: Box3D, b: Box3D, samples: int, seed: int) -> float:
    """Volume IoU estimated by uniform sampling of the overlap AABB.

    Independent oracle for iou3d: samples the axis-aligned bounding box of
    the two footprints' overlap region and counts points inside both boxes.
    """
    rng = np.random.default_rng(seed)
    ca = a.corners()
    cb = b.corners()
    lo = np.maximum(ca.min(axis=0), cb.min(axis=0))
    hi = np.minimum(ca.max(axis=0), cb.max(axis=0))
    vol_a = a.volume()
    vol_b = b.volume()
    if np.any(hi <= lo):
        return 0.0
    pts = rng.uniform(lo, hi, size=(samples, 3))

    def inside(box: Box3D, p: np.ndarray) -> np.ndarray:
        rot = rotation_about_y(box.state.yaw)
        local = (p - box.state.position) @ rot
        half = 0.5 * box.dims
        return np.all(np.abs(local) <= half, axis=1)

    frac = float(np.mean(inside(a, pts) & inside(b, pts)))
    inter = frac * float(np.prod(hi - lo))
    return inter / (vol_a + vol_b - inter)


def make_box(x, y, z, yaw, w=1.8, h=1.5, l=4.2) -> Box3D:
    return Box3D(ObjectState(np.array([x, y, z]), yaw), w, h, l)


class TestProjection:
    def test_known_point(self):
        # (1, 0, 10) with fx=700, cx=600: u = 700/10 + 600 = 670, v = cy.
        uv = project(np.array([1.0, 0.0, 10.0]), INTR)
        assert np.allclose(uv, [670.0, 180.0])

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        pts = np.stack(
            [
                rng.uniform(-5, 5, 200),
                rng.uniform(-2, 2, 200),
                rng.uniform(0.5, 60, 200),
            ],
            axis=1,
        )
        uv = project(pts, INTR)
        back = back_project(uv, pts[:, 2], INTR)
        assert np.max(np.abs(back - pts)) < 1e-9

    def test_non_positive_depth_rejected(self):
        with pytest.raises(GeometryError):
            project(np.array([0.0, 0.0, 0.0]), INTR)
        with pytest.raises(GeometryError):
            project(np.array([[1.0, 1.0, 2.0], [1.0, 1.0, -2.0]]), INTR)
        with pytest.raises(GeometryError):
            back_project(np.array([10.0, 10.0]), 0.0, INTR)


class TestAngles:
    def test_alpha_roundtrip_quadrants(self):
        rng = np.random.default_rng(1)
        for _ in range(500):
            pos = np.array(
                [rng.uniform(-20, 20), rng.uniform(-3, 3), rng.uniform(0.2, 50)]
            )
            yaw = rng.uniform(-math.pi, math.pi)
            alpha = alpha_from_theta(yaw, pos)
            assert -math.pi < alpha <= math.pi
            back = theta_from_alpha(alpha, pos)
            assert abs(wrap_angle(back - yaw)) < 1e-12

    def test_known_alpha(self):
        # yaw 0 at x == z gives alpha = atan2(x, z) = pi/4.
        assert abs(alpha_from_theta(0.0, np.array([5.0, 0.0, 5.0])) - math.pi / 4) < 1e-12
        # on-axis object: alpha equals yaw.
        assert abs(alpha_from_theta(0.7, np.array([0.0, 0.0, 9.0])) - 0.7) < 1e-12

    def test_wrap_angle_range(self):
        for a in np.linspace(-20, 20, 2001):
            w = wrap_angle(a)
            assert -math.pi < w <= math.pi
            assert abs(math.sin(w - a)) < 1e-9
        assert wrap_angle(math.pi) == pytest.approx(math.pi)
        assert wrap_angle(-math.pi) == pytest.approx(math.pi)

    def test_bad_depth(self):
        with pytest.raises(GeometryError):
            alpha_from_theta(0.0, np.array([1.0, 0.0, -1.0]))


class TestCoarseDepth:
    def test_exact_values(self):
        # fy * h3d / h2d: 700 * 1.5 / 70 = 15.
        assert coarse_depth(INTR, 1.5, 70.0) == pytest.approx(15.0)
        assert coarse_depth(INTR, 1.5, 140.0) == pytest.approx(7.5)

    def test_matches_render_geometry(self):
        # A fronto-parallel box at depth z projects to height fy*h/z when the
        # face spans the full vertical extent, so coarse depth inverts it.
        z = 22.0
        h = 1.6
        h2d = INTR.fy * h / z
        assert coarse_depth(INTR, h, h2d) == pytest.approx(z)

    def test_degenerate(self):
        with pytest.raises(GeometryError):
            coarse_depth(INTR, 1.5, 0.0)
        with pytest.raises(GeometryError):
            coarse_depth(INTR, -1.0, 10.0)


class TestIou2d:
    def test_half_overlap(self):
        a = Box2D(0, 0, 2, 2)
        b = Box2D(1, 0, 3, 2)
        # intersection 2, union 6.
        assert iou2d(a, b) == pytest.approx(1.0 / 3.0)

    def test_identity_and_disjoint(self):
        a = Box2D(3, 4, 10, 9)
        assert iou2d(a, a) == pytest.approx(1.0)
        assert iou2d(a, Box2D(20, 20, 30, 30)) == 0.0
        assert iou2d(a, Box2D(10, 4, 12, 9)) == 0.0  # touching edges

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            x0, y0 = rng.uniform(0, 10, 2)
            a = Box2D(x0, y0, x0 + rng.uniform(0.1, 5), y0 + rng.uniform(0.1, 5))
            x1, y1 = rng.uniform(0, 10, 2)
            b = Box2D(x1, y1, x1 + rng.uniform(0.1, 5), y1 + rng.uniform(0.1, 5))
            assert iou2d(a, b) == pytest.approx(iou2d(b, a), abs=1e-14)
            assert 0.0 <= iou2d(a, b) <= 1.0


class TestIou3d:
    def test_identical(self):
        a = make_box(1.0, 0.5, 12.0, 0.4)
        assert iou3d(a, a) == pytest.approx(1.0, abs=1e-12)

    def test_axis_aligned_half_shift(self):
        # Shift along length by l/2: intersection l/2*w*h, union 3/2*vol.
        a = make_box(0.0, 0.0, 10.0, 0.0)
        b = make_box(0.0, 0.0, 10.0 + a.length / 2, 0.0)
        assert iou3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-12)

    def test_rotated_pair_vs_monte_carlo(self):
        a = make_box(0.0, 0.0, 10.0, 0.3)
        b = make_box(0.6, 0.2, 10.5, -0.5)
        expected = monte_carlo_iou3d(a, b, samples=2_000_000, seed=11)
        assert iou3d(a, b) == pytest.approx(expected, abs=1e-3)

    def test_random_pairs_vs_monte_carlo(self):
        rng = np.random.default_rng(7)
        for _ in range(12):
            a = make_box(
                rng.uniform(-1, 1),
                rng.uniform(-0.5, 0.5),
                10 + rng.uniform(-1, 1),
                rng.uniform(-math.pi, math.pi),
                w=rng.uniform(0.5, 3),
                h=rng.uniform(0.5, 3),
                l=rng.uniform(0.5, 5),
            )
            b = make_box(
                rng.uniform(-1, 1),
                rng.uniform(-0.5, 0.5),
                10 + rng.uniform(-1, 1),
                rng.uniform(-math.pi, math.pi),
                w=rng.uniform(0.5, 3),
                h=rng.uniform(0.5, 3),
                l=rng.uniform(0.5, 5),
            )
            expected = monte_carlo_iou3d(a, b, samples=1_000_000, seed=13)
            assert iou3d(a, b) == pytest.approx(expected, abs=1.5e-3)

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            a = make_box(rng.uniform(-2, 2), 0.0, 10.0, rng.uniform(-3, 3))
            b = make_box(rng.uniform(-2, 2), 0.0, 10.0, rng.uniform(-3, 3))
            ab = iou3d(a, b)
            ba = iou3d(b, a)
            assert ab == pytest.approx(ba, abs=1e-10)
            assert 0.0 <= ab <= 1.0

    def test_yaw_periodicity(self):
        a = make_box(0.3, 0.0, 9.0, 0.25)
        b = make_box(0.0, 0.0, 9.5, 1.1)
        b_rot = make_box(0.0, 0.0, 9.5, 1.1 + math.pi)  # same footprint
        assert iou3d(a, b) == pytest.approx(iou3d(a, b_rot), abs=1e-12)

    def test_disjoint_vertical(self):
        a = make_box(0.0, 0.0, 10.0, 0.0)
        b = make_box(0.0, 5.0, 10.0, 0.0)
        assert iou3d(a, b) == 0.0


class TestBoxes:
    def test_state_yaw_normalized(self):
        s = ObjectState(np.array([0.0, 0.0, 5.0]), 3 * math.pi)
        assert s.yaw == pytest.approx(math.pi)

    def test_corners_yaw_zero(self):
        box = make_box(2.0, 1.0, 20.0, 0.0, w=2.0, h=1.0, l=4.0)
        c = box.corners()
        assert np.allclose(c.min(axis=0), [1.0, 0.5, 18.0])
        assert np.allclose(c.max(axis=0), [3.0, 1.5, 22.0])

    def test_bev_corners_ccw(self):
        box = make_box(0.0, 0.0, 10.0, 0.77)
        c = bev_corners(box)
        x = c[:, 0]
        z = c[:, 1]
        signed = 0.5 * (np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1)))
        assert signed > 0
        assert signed == pytest.approx(box.width * box.length, rel=1e-12)

    def test_centroid_distance(self):
        a = make_box(0.0, 0.0, 10.0, 0.0)
        b = make_box(3.0, 4.0, 10.0, 1.0)
        assert centroid_distance(a, b) == pytest.approx(5.0)

    def test_degenerate_rejected(self):
        with pytest.raises(GeometryError):
            make_box(0, 0, 10, 0, w=0.0)
        with pytest.raises(GeometryError):
            Box2D(0, 0, 0, 1)

    def test_box_to_box2d(self):
        box = make_box(0.0, 0.2, 15.0, 0.2)
        b2 = box_to_box2d(box, INTR)
        assert b2 is not None
        uv = project(box.corners(), INTR)
        assert b2.x_min == pytest.approx(max(uv[:, 0].min(), 0.0))
        assert b2.x_max == pytest.approx(min(uv[:, 0].max(), INTR.width - 1))
        behind = make_box(0.0, 0.0, 1.0, 0.0)  # corners straddle the camera
        assert box_to_box2d(behind, INTR) is None


class TestRig:
    def test_rig_validation(self):
        rig = StereoRig(INTR, 0.54)
        assert np.allclose(rig.stereo_translation, [-0.54, 0.0, 0.0])
        with pytest.raises(GeometryError):
            StereoRig(INTR, -0.1)

    def test_disparity_sign(self):
        rig = StereoRig(INTR, 0.54)
        p = np.array([1.0, 0.3, 12.0])
        u_left = project(p, INTR)[0]
        u_right = project(p + rig.stereo_translation, INTR)[0]
        assert u_left - u_right == pytest.approx(INTR.fx * rig.baseline / p[2])
