"""Pure numpy implementations of the hot kernels.

These are the reference implementations. The numba twins in _numba.py must
produce the same results; arithmetic is written in the same order in both
files so the outputs agree bit for bit (see tests/test_kernels.py).
"""

import numpy as np

PARALLEL_EPS = 1e-14
HIT_EPS = 1e-9


def raycast_boxes(origin, dirs, rot, pos, half):
    """Intersect rays with oriented boxes, keeping the nearest hit per ray.

    origin: (3,) ray origin shared by all rays.
    dirs: (n, 3) ray directions; hits are reported at parameter t along dir,
        so with dirs scaled to unit z the parameter equals camera depth.
    rot: (k, 3, 3) object-to-camera rotations.
    pos: (k, 3) box centers in camera coordinates.
    half: (k, 3) box half extents.

    Returns (hit (n,) int32 with -1 for misses, t (n,) float64,
    local (n, 3) float64 surface points in each box frame; zeros for misses).
    """
    n = dirs.shape[0]
    k = rot.shape[0]
    best_t = np.full(n, np.inf)
    best_idx = np.full(n, -1, np.int32)
    best_local = np.zeros((n, 3))
    for obj in range(k):
        r = rot[obj]
        # Transform into the box frame without BLAS so the summation order
        # matches the scalar loop in the numba twin.
        rel = origin - pos[obj]
        ox = r[0, 0] * rel[0] + r[1, 0] * rel[1] + r[2, 0] * rel[2]
        oy = r[0, 1] * rel[0] + r[1, 1] * rel[1] + r[2, 1] * rel[2]
        oz = r[0, 2] * rel[0] + r[1, 2] * rel[1] + r[2, 2] * rel[2]
        o_box = (ox, oy, oz)
        d_box = []
        for a in range(3):
            d_box.append(
                r[0, a] * dirs[:, 0] + r[1, a] * dirs[:, 1] + r[2, a] * dirs[:, 2]
            )
        t_near = np.full(n, -np.inf)
        t_far = np.full(n, np.inf)
        for a in range(3):
            da = d_box[a]
            oa = o_box[a]
            ha = half[obj, a]
            parallel = np.abs(da) <= PARALLEL_EPS
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (-ha - oa) / da
                t2 = (ha - oa) / da
            lo = np.minimum(t1, t2)
            hi = np.maximum(t1, t2)
            inside = np.abs(oa) <= ha
            lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
            hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
            t_near = np.maximum(t_near, lo)
            t_far = np.minimum(t_far, hi)
        hit = (t_near <= t_far) & (t_near > HIT_EPS) & (t_near < best_t)
        if np.any(hit):
            best_t = np.where(hit, t_near, best_t)
            best_idx = np.where(hit, np.int32(obj), best_idx)
            for a in range(3):
                best_local[:, a] = np.where(
                    hit, o_box[a] + t_near * d_box[a], best_local[:, a]
                )
    return best_idx, np.where(best_idx >= 0, best_t, 0.0), best_local


def bilinear_sample(grid, u, v):
    """Sample grid (rows v, cols u) at float positions with bilinear weights.

    Queries are clamped to the valid interpolation domain
    [0, W-1] x [0, H-1]; callers drop out-of-domain points beforehand.
    """
    h, w = grid.shape
    j0 = np.clip(np.floor(u), 0, w - 2).astype(np.int64)
    i0 = np.clip(np.floor(v), 0, h - 2).astype(np.int64)
    a = u - j0
    b = v - i0
    g00 = grid[i0, j0]
    g01 = grid[i0, j0 + 1]
    g10 = grid[i0 + 1, j0]
    g11 = grid[i0 + 1, j0 + 1]
    top = g00 + a * (g01 - g00)
    bot = g10 + a * (g11 - g10)
    return top + b * (bot - top)


def bilinear_sample_grad(grid, u, v):
    """Like bilinear_sample but also returns d/du and d/dv of the interpolant."""
    h, w = grid.shape
    j0 = np.clip(np.floor(u), 0, w - 2).astype(np.int64)
    i0 = np.clip(np.floor(v), 0, h - 2).astype(np.int64)
    a = u - j0
    b = v - i0
    g00 = grid[i0, j0]
    g01 = grid[i0, j0 + 1]
    g10 = grid[i0 + 1, j0]
    g11 = grid[i0 + 1, j0 + 1]
    top = g00 + a * (g01 - g00)
    bot = g10 + a * (g11 - g10)
    val = top + b * (bot - top)
    du = (g01 - g00) + b * ((g11 - g10) - (g01 - g00))
    dv = bot - top
    return val, du, dv


def nn_match(cur, prev):
    """Nearest neighbour of each cur row among prev rows (squared Euclidean).

    Ties keep the lowest prev index. Returns (idx (n,) int64, dist (n,)).
    """
    d2 = (cur[:, 0:1] - prev[None, :, 0]) ** 2
    d2 = d2 + (cur[:, 1:2] - prev[None, :, 1]) ** 2
    d2 = d2 + (cur[:, 2:3] - prev[None, :, 2]) ** 2
    idx = np.argmin(d2, axis=1)
    dist = np.sqrt(d2[np.arange(cur.shape[0]), idx])
    return idx.astype(np.int64), dist
