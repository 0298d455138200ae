"""Correspondence tests with exhaustive oracles."""

import numpy as np
import pytest

from stereotrack.correspond import (
    gradient_magnitude_at,
    match_coordinates,
    select_pixels,
)


def ripple_image(h=60, w=80):
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    return 0.5 + 0.3 * np.sin(0.21 * u) * np.cos(0.13 * v) + 0.002 * u


def test_gradient_magnitude_matches_known_slope():
    img = np.outer(np.ones(30), np.linspace(0.0, 1.0, 40))
    pix = np.array([[10.3, 12.7], [25.0, 5.0]])
    got = gradient_magnitude_at(img, pix)
    np.testing.assert_allclose(got, 1.0 / 39.0, atol=1e-12)


def test_select_pixels_matches_exhaustive_sort():
    rng = np.random.default_rng(8)
    img = ripple_image()
    pix = np.column_stack(
        [rng.uniform(2, 77, size=120), rng.uniform(2, 57, size=120)]
    )
    scores = gradient_magnitude_at(img, pix)
    oracle = sorted(range(120), key=lambda i: (-scores[i], i))
    got = select_pixels(img, pix, budget=30)
    assert got.size == 30
    np.testing.assert_array_equal(got.indices, oracle[:30])
    np.testing.assert_array_equal(got.scores, scores[oracle[:30]])


def test_select_pixels_is_budget_monotone():
    rng = np.random.default_rng(9)
    img = ripple_image()
    pix = np.column_stack([rng.uniform(2, 77, size=80), rng.uniform(2, 57, size=80)])
    small = select_pixels(img, pix, budget=10)
    large = select_pixels(img, pix, budget=40)
    np.testing.assert_array_equal(large.indices[:10], small.indices)


def test_select_pixels_ties_break_by_index():
    img = np.outer(np.ones(20), np.linspace(0.0, 1.0, 20))  # uniform gradient
    pix = np.array([[5.0, 5.0], [3.0, 9.0], [11.0, 2.0]])
    got = select_pixels(img, pix, budget=2)
    np.testing.assert_array_equal(got.indices, [0, 1])


def test_select_pixels_budget_exceeding_pool():
    img = ripple_image()
    pix = np.array([[5.0, 5.0], [9.0, 9.0]])
    got = select_pixels(img, pix, budget=50)
    assert got.size == 2
    with pytest.raises(ValueError):
        select_pixels(img, pix, budget=0)


def brute_match(cur, prev, max_dist):
    pairs = []
    for i in range(cur.shape[0]):
        d = np.linalg.norm(prev - cur[i], axis=1)
        j = int(np.argmin(d))
        if d[j] <= max_dist:
            pairs.append((i, j, d[j]))
    return pairs


def test_match_coordinates_matches_brute_force():
    rng = np.random.default_rng(4)
    cur = rng.uniform(-1, 1, size=(40, 3))
    prev = rng.uniform(-1, 1, size=(35, 3))
    got = match_coordinates(cur, prev, max_distance=0.3)
    want = brute_match(cur, prev, 0.3)
    assert got.size == len(want)
    for k, (i, j, d) in enumerate(want):
        assert got.idx_current[k] == i
        assert got.idx_previous[k] == j
        assert abs(got.distance[k] - d) < 1e-12


def test_match_coordinates_pairs_survive_reordering():
    rng = np.random.default_rng(5)
    cur = rng.uniform(-1, 1, size=(25, 3))
    prev = cur + rng.normal(0, 0.01, size=(25, 3))
    perm = rng.permutation(25)
    a = match_coordinates(cur, prev, max_distance=0.1)
    b = match_coordinates(cur, prev[perm], max_distance=0.1)
    pairs_a = {(i, tuple(prev[j])) for i, j in zip(a.idx_current, a.idx_previous)}
    pairs_b = {(i, tuple(prev[perm][j])) for i, j in zip(b.idx_current, b.idx_previous)}
    assert pairs_a == pairs_b


def test_match_coordinates_gate_and_empty():
    cur = np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])
    prev = np.array([[0.05, 0.0, 0.0]])
    got = match_coordinates(cur, prev, max_distance=0.1)
    assert got.size == 1
    assert got.idx_current[0] == 0
    empty = match_coordinates(cur, np.zeros((0, 3)), max_distance=0.1)
    assert empty.size == 0
