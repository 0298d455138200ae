"""Numba twins of the hot kernels.

Scalar loops compiled with @njit. Arithmetic mirrors _numpy.py expression by
expression; fastmath stays off so no FMA contraction changes the results.
"""

import numpy as np
from numba import njit

PARALLEL_EPS = 1e-14
HIT_EPS = 1e-9


@njit(cache=True)
def raycast_boxes(origin, dirs, rot, pos, half):
    n = dirs.shape[0]
    k = rot.shape[0]
    best_t = np.full(n, np.inf)
    best_idx = np.full(n, -1, np.int32)
    best_local = np.zeros((n, 3))
    for obj in range(k):
        r = rot[obj]
        rx = origin[0] - pos[obj, 0]
        ry = origin[1] - pos[obj, 1]
        rz = origin[2] - pos[obj, 2]
        ox = r[0, 0] * rx + r[1, 0] * ry + r[2, 0] * rz
        oy = r[0, 1] * rx + r[1, 1] * ry + r[2, 1] * rz
        oz = r[0, 2] * rx + r[1, 2] * ry + r[2, 2] * rz
        for i in range(n):
            d0 = dirs[i, 0]
            d1 = dirs[i, 1]
            d2 = dirs[i, 2]
            t_near = -np.inf
            t_far = np.inf
            ok = True
            for a in range(3):
                da = r[0, a] * d0 + r[1, a] * d1 + r[2, a] * d2
                if a == 0:
                    oa = ox
                elif a == 1:
                    oa = oy
                else:
                    oa = oz
                ha = half[obj, a]
                if abs(da) <= PARALLEL_EPS:
                    if abs(oa) <= ha:
                        lo = -np.inf
                        hi = np.inf
                    else:
                        ok = False
                        break
                else:
                    t1 = (-ha - oa) / da
                    t2 = (ha - oa) / da
                    lo = min(t1, t2)
                    hi = max(t1, t2)
                if lo > t_near:
                    t_near = lo
                if hi < t_far:
                    t_far = hi
            if not ok:
                continue
            if t_near <= t_far and t_near > HIT_EPS and t_near < best_t[i]:
                best_t[i] = t_near
                best_idx[i] = obj
                for a in range(3):
                    da = r[0, a] * d0 + r[1, a] * d1 + r[2, a] * d2
                    if a == 0:
                        oa = ox
                    elif a == 1:
                        oa = oy
                    else:
                        oa = oz
                    best_local[i, a] = oa + t_near * da
    for i in range(n):
        if best_idx[i] < 0:
            best_t[i] = 0.0
    return best_idx, best_t, best_local


@njit(cache=True)
def bilinear_sample(grid, u, v):
    h, w = grid.shape
    n = u.shape[0]
    out = np.empty(n)
    for i in range(n):
        j0 = int(np.floor(u[i]))
        i0 = int(np.floor(v[i]))
        if j0 < 0:
            j0 = 0
        elif j0 > w - 2:
            j0 = w - 2
        if i0 < 0:
            i0 = 0
        elif i0 > h - 2:
            i0 = h - 2
        a = u[i] - j0
        b = v[i] - i0
        g00 = grid[i0, j0]
        g01 = grid[i0, j0 + 1]
        g10 = grid[i0 + 1, j0]
        g11 = grid[i0 + 1, j0 + 1]
        top = g00 + a * (g01 - g00)
        bot = g10 + a * (g11 - g10)
        out[i] = top + b * (bot - top)
    return out


@njit(cache=True)
def bilinear_sample_grad(grid, u, v):
    h, w = grid.shape
    n = u.shape[0]
    val = np.empty(n)
    du = np.empty(n)
    dv = np.empty(n)
    for i in range(n):
        j0 = int(np.floor(u[i]))
        i0 = int(np.floor(v[i]))
        if j0 < 0:
            j0 = 0
        elif j0 > w - 2:
            j0 = w - 2
        if i0 < 0:
            i0 = 0
        elif i0 > h - 2:
            i0 = h - 2
        a = u[i] - j0
        b = v[i] - i0
        g00 = grid[i0, j0]
        g01 = grid[i0, j0 + 1]
        g10 = grid[i0 + 1, j0]
        g11 = grid[i0 + 1, j0 + 1]
        top = g00 + a * (g01 - g00)
        bot = g10 + a * (g11 - g10)
        val[i] = top + b * (bot - top)
        du[i] = (g01 - g00) + b * ((g11 - g10) - (g01 - g00))
        dv[i] = bot - top
    return val, du, dv


@njit(cache=True)
def nn_match(cur, prev):
    n = cur.shape[0]
    m = prev.shape[0]
    idx = np.empty(n, np.int64)
    dist = np.empty(n)
    for i in range(n):
        best = np.inf
        best_j = 0
        for j in range(m):
            dx = cur[i, 0] - prev[j, 0]
            dy = cur[i, 1] - prev[j, 1]
            dz = cur[i, 2] - prev[j, 2]
            d2 = dx * dx
            d2 = d2 + dy * dy
            d2 = d2 + dz * dz
            if d2 < best:
                best = d2
                best_j = j
        idx[i] = best_j
        dist[i] = np.sqrt(best)
    return idx, dist
