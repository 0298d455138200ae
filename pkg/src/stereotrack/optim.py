"""Joint two-frame pose refinement.

The decision variables are one 4-vector per frame, (px, py, pz, yaw), stacked
as [previous frame | current frame] into an 8-dim state (4-dim for
single-frame solves). Measurement terms are expressed as residual blocks that
return stacked residual groups with analytic Jacobians:

* photometric: a pixel with known local depth is lifted to 3D at the depth
  implied by the state and re-observed in the right image; the residual is the
  left/right intensity difference. Only the depth component of the state moves
  this term.
* reprojection: a current-frame pixel is lifted, carried through both object
  poses into the previous camera, and compared against its matched
  previous-frame pixel position.
* coordinates: a previous-frame pixel is carried forward into the current
  camera and the dense local-coordinate map is read there; the residual is the
  difference against the pixel's own local coordinates.
* pose anchors: the projected centre against a measured image point, and the
  composed observation angle against its measured value.

Groups are robustified with a Huber kernel on the group norm and the damped
Gauss-Newton loop re-solves with updated robust weights a configurable number
of times per linearization. A converged window is compressed by marginalizing
the previous frame: the Schur complement of the final normal equation becomes
a quadratic prior carried to the next window.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from stereotrack import kernels
from stereotrack.geometry import CameraIntrinsics, StereoRig

__all__ = [
    "MarginalPrior",
    "NormalEquation",
    "OptimizerWeights",
    "ResidualBlock",
    "SolveReport",
    "SolverConfig",
    "assemble_normal_equation",
    "coordinate_block",
    "marginalize",
    "photometric_block",
    "pose_angle_block",
    "pose_projection_block",
    "prior_block",
    "reprojection_block",
    "run_gauss_newton",
]

# Depth floor during iteration: steps that push points this close to the
# camera plane get a flat (zero-gradient) projection and a rejected step.
Z_MIN = 0.1


@dataclass(frozen=True)
class OptimizerWeights:
    """Relative term weights and Huber widths.

    Huber widths are in the raw unit of each residual group (intensity,
    pixels, metres) and sit a few sigmas above the simulator's noise
    defaults. Pose anchors stay quadratic: they are single measurements, so
    down-weighting outliers would just disable them.
    """

    photometric: float = 2500.0
    reprojection: float = 1.0
    coordinates: float = 400.0
    pose_projection: float = 0.25
    pose_angle: float = 400.0
    huber_photometric: float = 0.0269
    huber_reprojection: float = 1.345
    huber_coordinates: float = 0.06725


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 20
    irls_steps: int = 2
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_min: float = 1e-10
    lambda_max: float = 1e8
    max_rejects: int = 10
    step_tol: float = 1e-6
    cost_tol: float = 1e-8
    collect_trace: bool = False


@dataclass(frozen=True)
class ResidualBlock:
    """One measurement term.

    fn(x) returns (residuals (m, g), jacobian (m, g, dim), dropped), where
    dropped counts measurements invalidated at this state (behind the camera,
    warped off the image, off the map support). Dropped rows are zeroed, so
    they contribute nothing to cost or normal equation. can_drop marks blocks
    whose validity depends on the state; anchors and priors never lose rows.
    """

    name: str
    weight: float
    huber_delta: float | None
    fn: object
    can_drop: bool = False

    def evaluate(self, x: np.ndarray):
        return self.fn(x)


@dataclass(frozen=True)
class NormalEquation:
    """Gauss-Newton system at a linearization point: H @ step = b."""

    H: np.ndarray
    b: np.ndarray
    cost: float
    n_groups: int
    x_lin: np.ndarray | None = None
    block_costs: dict = field(default_factory=dict)
    block_used: dict = field(default_factory=dict)
    block_dropped: dict = field(default_factory=dict)
    droppable: tuple = ()


@dataclass(frozen=True)
class SolveReport:
    x: np.ndarray
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    reason: str
    normal_equation: NormalEquation
    elapsed_s: float
    trace: tuple = ()

    @property
    def term_costs(self) -> dict:
        return dict(self.normal_equation.block_costs)

    @property
    def residuals_used(self) -> dict:
        return dict(self.normal_equation.block_used)

    @property
    def residuals_dropped(self) -> dict:
        return dict(self.normal_equation.block_dropped)

    @property
    def low_confidence(self) -> bool:
        """True when over half of the droppable measurements fell out.

        Anchor and prior rows never drop, so they stay out of the count;
        otherwise a thin pixel set could never trip the flag.
        """
        ne = self.normal_equation
        used = sum(ne.block_used.get(k, 0) for k in ne.droppable)
        dropped = sum(ne.block_dropped.get(k, 0) for k in ne.droppable)
        total = used + dropped
        return total > 0 and dropped > 0.5 * total


@dataclass(frozen=True)
class MarginalPrior:
    """Quadratic prior 0.5 * (x - mu)^T H (x - mu) on a 4-dim frame state.

    Stored in information form (matrix plus absolute linear term) so rank
    deficiency survives round trips; mu is the minimum-norm minimizer.
    damped records whether the eliminated block needed stabilizing before
    inversion.
    """

    H: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    anchor_frame: int = -1
    damped: bool = False

    def scale(self, factor: float) -> "MarginalPrior":
        """Discount confidence; the implied mean is unchanged."""
        if factor < 0:
            raise ValueError("prior scale factor must be non-negative")
        return MarginalPrior(
            self.H * factor, self.b * factor, self.mu.copy(), self.anchor_frame, self.damped
        )


def _wrap(a):
    return np.mod(np.asarray(a) + math.pi, 2.0 * math.pi) - math.pi


def _huber(norms: np.ndarray, delta: float | None):
    """Per-group robust cost and IRLS weight for the Huber kernel."""
    if delta is None:
        return 0.5 * norms * norms, np.ones_like(norms)
    small = norms <= delta
    rho = np.where(small, 0.5 * norms * norms, delta * (norms - 0.5 * delta))
    with np.errstate(divide="ignore", invalid="ignore"):
        omega = np.where(small, 1.0, delta / np.maximum(norms, 1e-300))
    return rho, omega


def _projection_jacobian(points: np.ndarray, intr: CameraIntrinsics):
    """Pixel positions and d(pixel)/d(point) rows, depth-floored at Z_MIN."""
    z = points[:, 2]
    clamped = z < Z_MIN
    zs = np.where(clamped, Z_MIN, z)
    u = intr.fx * points[:, 0] / zs + intr.cx
    v = intr.fy * points[:, 1] / zs + intr.cy
    uv = np.stack([u, v], axis=1)
    jac = np.zeros((points.shape[0], 2, 3))
    jac[:, 0, 0] = intr.fx / zs
    jac[:, 1, 1] = intr.fy / zs
    dz = np.where(clamped, 0.0, 1.0)  # flat beyond the floor
    jac[:, 0, 2] = -intr.fx * points[:, 0] / (zs * zs) * dz
    jac[:, 1, 2] = -intr.fy * points[:, 1] / (zs * zs) * dz
    return uv, jac


def _ray_dirs(pixels: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    return np.stack(
        [
            (pixels[:, 0] - intr.cx) / intr.fx,
            (pixels[:, 1] - intr.cy) / intr.fy,
            np.ones(pixels.shape[0]),
        ],
        axis=1,
    )


def _rot(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _drot(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


# --------------------------------------------------------------------------
# residual builders


def photometric_block(
    image_left: np.ndarray,
    image_right: np.ndarray,
    rig: StereoRig,
    pixels: np.ndarray,
    local_depth: np.ndarray,
    weights: OptimizerWeights,
    offset: int,
    dim: int,
) -> ResidualBlock:
    """Stereo intensity residuals; constrains the depth channel only."""
    intr = rig.intrinsics
    dirs = _ray_dirs(pixels, intr)
    left_vals = kernels.bilinear_sample(
        np.ascontiguousarray(image_left), pixels[:, 0].copy(), pixels[:, 1].copy()
    )
    t_stereo = rig.stereo_translation
    img_r = np.ascontiguousarray(image_right)
    depth_col = offset + 2

    def fn(x):
        depth = local_depth + x[depth_col]
        pts = dirs * depth[:, None]
        uv_r, dpi = _projection_jacobian(pts + t_stereo, intr)
        ok = (
            (depth > Z_MIN)
            & (uv_r[:, 0] >= 0)
            & (uv_r[:, 0] <= intr.width - 1)
            & (uv_r[:, 1] >= 0)
            & (uv_r[:, 1] <= intr.height - 1)
        )
        vals, gu, gv = kernels.bilinear_sample_grad(img_r, uv_r[:, 0].copy(), uv_r[:, 1].copy())
        r = (left_vals - vals)[:, None]
        # d(pt)/d(depth state) is the ray direction; chain through projection
        # and the right-image gradient, negated by the residual sign.
        duv_dz = np.einsum("ngk,nk->ng", dpi, dirs)
        jac = np.zeros((pixels.shape[0], 1, dim))
        jac[:, 0, depth_col] = -(gu * duv_dz[:, 0] + gv * duv_dz[:, 1])
        r[~ok] = 0.0
        jac[~ok] = 0.0
        return r, jac, int((~ok).sum())

    return ResidualBlock(
        "photometric", weights.photometric, weights.huber_photometric, fn, can_drop=True
    )


def reprojection_block(
    rig: StereoRig,
    pixels_current: np.ndarray,
    local_depth_current: np.ndarray,
    pixels_previous: np.ndarray,
    weights: OptimizerWeights,
    offset_previous: int = 0,
    offset_current: int = 4,
    dim: int = 8,
) -> ResidualBlock:
    """Backward warp of current pixels against matched previous positions."""
    intr = rig.intrinsics
    dirs = _ray_dirs(pixels_current, intr)
    n = pixels_current.shape[0]

    def fn(x):
        p_prev = x[offset_previous : offset_previous + 3]
        th_prev = x[offset_previous + 3]
        p_cur = x[offset_current : offset_current + 3]
        th_cur = x[offset_current + 3]
        rot_prev, rot_cur = _rot(th_prev), _rot(th_cur)
        depth = local_depth_current + p_cur[2]
        pts_cur = dirs * depth[:, None]
        obj = (pts_cur - p_cur) @ rot_cur  # rows: R_cur^T (P - p_cur)
        pts_prev = obj @ rot_prev.T + p_prev
        ok = (depth > Z_MIN) & (pts_prev[:, 2] > Z_MIN)
        uv, dpi = _projection_jacobian(pts_prev, intr)
        r = uv - pixels_previous

        jac = np.zeros((n, 2, dim))
        rel = rot_prev @ rot_cur.T
        # current position: P depends on pz through the ray, pose shift is -I
        d_pcur = np.einsum("ngk,kj->ngj", dpi, rel) * -1.0
        jac[:, :, offset_current : offset_current + 3] = d_pcur
        ray_term = np.einsum("kj,nj->nk", rel, dirs)
        jac[:, :, offset_current + 2] += np.einsum("ngk,nk->ng", dpi, ray_term)
        # current yaw through d/dth of R_cur^T
        d_obj = (pts_cur - p_cur) @ _drot(th_cur)
        jac[:, :, offset_current + 3] = np.einsum(
            "ngk,nk->ng", dpi, d_obj @ rot_prev.T
        )
        # previous pose enters additively / through R_prev
        jac[:, :, offset_previous : offset_previous + 3] = dpi
        jac[:, :, offset_previous + 3] = np.einsum(
            "ngk,nk->ng", dpi, obj @ _drot(th_prev).T
        )
        r[~ok] = 0.0
        jac[~ok] = 0.0
        return r, jac, int((~ok).sum())

    return ResidualBlock(
        "reprojection", weights.reprojection, weights.huber_reprojection, fn, can_drop=True
    )


def coordinate_block(
    rig: StereoRig,
    patch_current,
    pixels_previous: np.ndarray,
    local_depth_previous: np.ndarray,
    local_coords_previous: np.ndarray,
    weights: OptimizerWeights,
    offset_previous: int = 0,
    offset_current: int = 4,
    dim: int = 8,
) -> ResidualBlock:
    """Forward warp of previous pixels into the current coordinate map.

    Pixels whose warped position the map rejects (outside, deep hole) drop
    out of the residual with zero rows, so their influence vanishes rather
    than exploding.
    """
    intr = rig.intrinsics
    dirs = _ray_dirs(pixels_previous, intr)
    n = pixels_previous.shape[0]

    def fn(x):
        p_prev = x[offset_previous : offset_previous + 3]
        th_prev = x[offset_previous + 3]
        p_cur = x[offset_current : offset_current + 3]
        th_cur = x[offset_current + 3]
        rot_prev, rot_cur = _rot(th_prev), _rot(th_cur)
        depth = local_depth_previous + p_prev[2]
        pts_prev = dirs * depth[:, None]
        obj = (pts_prev - p_prev) @ rot_prev
        pts_cur = obj @ rot_cur.T + p_cur
        uv, dpi = _projection_jacobian(pts_cur, intr)
        map_vals, map_grad, ok = patch_current.sample_with_grad(uv[:, 0], uv[:, 1])
        ok &= (depth > Z_MIN) & (pts_cur[:, 2] > Z_MIN)
        r = map_vals - local_coords_previous
        r[~ok] = 0.0

        duv = np.zeros((n, 2, dim))
        rel = rot_cur @ rot_prev.T
        d_pprev = np.einsum("ngk,kj->ngj", dpi, rel) * -1.0
        duv[:, :, offset_previous : offset_previous + 3] = d_pprev
        ray_term = np.einsum("kj,nj->nk", rel, dirs)
        duv[:, :, offset_previous + 2] += np.einsum("ngk,nk->ng", dpi, ray_term)
        d_obj = (pts_prev - p_prev) @ _drot(th_prev)
        duv[:, :, offset_previous + 3] = np.einsum(
            "ngk,nk->ng", dpi, d_obj @ rot_cur.T
        )
        duv[:, :, offset_current : offset_current + 3] = dpi
        duv[:, :, offset_current + 3] = np.einsum(
            "ngk,nk->ng", dpi, obj @ _drot(th_cur).T
        )
        jac = np.einsum("ncg,ngd->ncd", map_grad, duv)
        jac[~ok] = 0.0
        return r, jac, int((~ok).sum())

    return ResidualBlock(
        "coordinates", weights.coordinates, weights.huber_coordinates, fn, can_drop=True
    )


def pose_projection_block(
    rig: StereoRig,
    centroid: np.ndarray,
    weights: OptimizerWeights,
    offset: int,
    dim: int,
) -> ResidualBlock:
    """Projected-centre anchor: measured point minus predicted projection."""
    intr = rig.intrinsics
    c = np.asarray(centroid, dtype=np.float64).reshape(1, 2)

    def fn(x):
        p = x[offset : offset + 3].reshape(1, 3)
        uv, dpi = _projection_jacobian(p, intr)
        r = c - uv
        jac = np.zeros((1, 2, dim))
        jac[:, :, offset : offset + 3] = -dpi
        return r, jac, 0

    return ResidualBlock("pose_projection", weights.pose_projection, None, fn)


def pose_angle_block(
    observation_angle: float,
    weights: OptimizerWeights,
    offset: int,
    dim: int,
) -> ResidualBlock:
    """Observation-angle anchor on yaw composed with the bearing atan2(x, z)."""

    def fn(x):
        px, pz = x[offset], x[offset + 2]
        th = x[offset + 3]
        denom = px * px + pz * pz
        r = _wrap(observation_angle - (th + math.atan2(px, pz))).reshape(1, 1)
        jac = np.zeros((1, 1, dim))
        jac[0, 0, offset] = -pz / denom
        jac[0, 0, offset + 2] = px / denom
        jac[0, 0, offset + 3] = -1.0
        return r, jac, 0

    return ResidualBlock("pose_angle", weights.pose_angle, None, fn)


def prior_block(prior: MarginalPrior, offset: int, dim: int) -> ResidualBlock:
    """Quadratic prior as square-root residual rows on one frame sub-state."""
    eigvals, eigvecs = np.linalg.eigh(0.5 * (prior.H + prior.H.T))
    root = np.sqrt(np.clip(eigvals, 0.0, None))
    L = root[:, None] * eigvecs.T
    proj_b = eigvecs.T @ prior.b
    tol = max(1e-12, 1e-12 * float(root.max(initial=0.0)))
    c = np.where(root > tol, proj_b / np.maximum(root, tol), 0.0)

    def fn(x):
        sub = x[offset : offset + 4]
        r = (L @ sub - c).reshape(-1, 1)
        jac = np.zeros((4, 1, dim))
        jac[:, 0, offset : offset + 4] = L
        return r, jac, 0

    return ResidualBlock("prior", 1.0, None, fn)


# --------------------------------------------------------------------------
# assembly and solve


def assemble_normal_equation(blocks, x: np.ndarray, dim: int) -> NormalEquation:
    """Accumulate the robustified Gauss-Newton system at x."""
    H = np.zeros((dim, dim))
    b = np.zeros(dim)
    cost = 0.0
    n_groups = 0
    block_costs = {}
    block_used = {}
    block_dropped = {}
    droppable = []
    for block in blocks:
        if block.can_drop and block.name not in droppable:
            droppable.append(block.name)
        r, jac, dropped = block.evaluate(x)
        norms = np.linalg.norm(r, axis=1)
        rho, omega = _huber(norms, block.huber_delta)
        c = block.weight * float(rho.sum())
        block_costs[block.name] = block_costs.get(block.name, 0.0) + c
        block_used[block.name] = block_used.get(block.name, 0) + r.shape[0] - dropped
        block_dropped[block.name] = block_dropped.get(block.name, 0) + dropped
        cost += c
        w = block.weight * omega
        jw = jac * w[:, None, None]
        H += np.einsum("ngd,nge->de", jw, jac)
        b -= np.einsum("ngd,ng->d", jw, r)
        n_groups += r.shape[0]
    return NormalEquation(
        H=H,
        b=b,
        cost=cost,
        n_groups=n_groups,
        x_lin=x.copy(),
        block_costs=block_costs,
        block_used=block_used,
        block_dropped=block_dropped,
        droppable=tuple(droppable),
    )


def _cost_only(blocks, x: np.ndarray) -> float:
    total = 0.0
    for block in blocks:
        r, _, _ = block.evaluate(x)
        norms = np.linalg.norm(r, axis=1)
        rho, _ = _huber(norms, block.huber_delta)
        total += block.weight * float(rho.sum())
    return total


def run_gauss_newton(
    blocks,
    x0: np.ndarray,
    config: SolverConfig = SolverConfig(),
) -> SolveReport:
    """Damped Gauss-Newton with per-linearization IRLS refinement.

    A step is accepted only if it does not increase the robust cost;
    rejected steps raise the damping. Yaw components live unwrapped in the
    state, residuals wrap differences instead.
    """
    t0 = time.perf_counter()
    x = np.asarray(x0, dtype=np.float64).copy()
    dim = x.shape[0]
    lam = config.lambda_init
    cost = _cost_only(blocks, x)
    initial_cost = cost
    reason = "max_iterations"
    converged = False
    iterations = 0
    def solve_step(ne_, lam_):
        try:
            return np.linalg.solve(ne_.H + lam_ * np.eye(dim), ne_.b)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(ne_.H + lam_ * np.eye(dim), ne_.b, rcond=None)[0]

    trace: list[dict] = []
    for it in range(config.max_iterations):
        iterations = it + 1
        ne = assemble_normal_equation(blocks, x, dim)
        cost = ne.cost
        step = solve_step(ne, lam)
        for _ in range(config.irls_steps - 1):
            # Reweight at the linearly predicted residuals and re-solve.
            ne = _reweighted_system(blocks, x, step, dim)
            step = solve_step(ne, lam)
        accepted = False
        rejects = 0
        while rejects <= config.max_rejects:
            x_try = x + step
            cost_try = _cost_only(blocks, x_try)
            if np.isfinite(cost_try) and cost_try <= cost:
                accepted = True
                break
            lam = min(lam * config.lambda_up, config.lambda_max)
            rejects += 1
            step = solve_step(ne, lam)
        if config.collect_trace:
            trace.append(
                {
                    "iteration": iterations,
                    "cost": float(cost),
                    "cost_try": float(cost_try),
                    "lambda": float(lam),
                    "step_norm": float(np.linalg.norm(step)),
                    "accepted": bool(accepted),
                    "rejects": rejects,
                }
            )
        if not accepted:
            # Even heavily damped steps go uphill: a numerical minimum.
            converged = True
            reason = "damping_floor"
            break
        improvement = cost - cost_try
        x = x_try
        cost = cost_try
        lam = max(lam / config.lambda_down, config.lambda_min)
        if np.linalg.norm(step) < config.step_tol:
            converged = True
            reason = "step_tolerance"
            break
        if improvement < config.cost_tol * max(cost, 1.0):
            converged = True
            reason = "cost_tolerance"
            break
    final_ne = assemble_normal_equation(blocks, x, dim)
    return SolveReport(
        x=x,
        cost=final_ne.cost,
        initial_cost=initial_cost,
        iterations=iterations,
        converged=converged,
        reason=reason,
        normal_equation=final_ne,
        elapsed_s=time.perf_counter() - t0,
        trace=tuple(trace),
    )


def _reweighted_system(blocks, x: np.ndarray, step: np.ndarray, dim: int) -> NormalEquation:
    """Normal equation with robust weights taken at linearly predicted residuals."""
    H = np.zeros((dim, dim))
    b = np.zeros(dim)
    cost = 0.0
    n_groups = 0
    for block in blocks:
        r, jac, _ = block.evaluate(x)
        predicted = r + np.einsum("ngd,d->ng", jac, step)
        norms = np.linalg.norm(predicted, axis=1)
        rho_now, omega = _huber(np.linalg.norm(r, axis=1), block.huber_delta)
        _, omega_pred = _huber(norms, block.huber_delta)
        omega = np.minimum(omega, omega_pred)
        cost += block.weight * float(rho_now.sum())
        w = block.weight * omega
        jw = jac * w[:, None, None]
        H += np.einsum("ngd,nge->de", jw, jac)
        b -= np.einsum("ngd,ng->d", jw, r)
        n_groups += r.shape[0]
    return NormalEquation(H=H, b=b, cost=cost, n_groups=n_groups, x_lin=x.copy())


# --------------------------------------------------------------------------
# marginalization


def marginalize(
    ne: NormalEquation,
    x_lin: np.ndarray | None = None,
    keep: tuple[int, int] = (4, 8),
    drop: tuple[int, int] = (0, 4),
    anchor_frame: int = -1,
) -> MarginalPrior | None:
    """Collapse the dropped sub-state of a converged window into a prior.

    The quadratic model at the linearization point is first rewritten in
    absolute coordinates (linear term H @ x_lin + b), then the dropped block
    is eliminated with a Schur complement. The result is the exact marginal
    of the Gaussian the normal equation defines.

    A dropped block that fails a Cholesky factorization gets one chance:
    damping of 1e-8 * trace(H_dd) / n_dropped on its diagonal, recorded on
    the returned prior. If it is still not positive definite the eliminated
    state carried no usable information and None is returned; the caller is
    expected to continue without a prior.
    """
    if x_lin is None:
        x_lin = ne.x_lin
    if x_lin is None:
        raise ValueError("no linearization point: pass x_lin or use an assembled system")
    ks, ke = keep
    ds, de = drop
    b_abs = ne.H @ x_lin + ne.b
    H_kk = ne.H[ks:ke, ks:ke]
    H_kd = ne.H[ks:ke, ds:de]
    H_dd = ne.H[ds:de, ds:de]
    b_k = b_abs[ks:ke]
    b_d = b_abs[ds:de]
    damped = False
    try:
        chol = np.linalg.cholesky(H_dd)
    except np.linalg.LinAlgError:
        damped = True
        lam = 1e-8 * float(np.trace(H_dd)) / max(de - ds, 1)
        try:
            chol = np.linalg.cholesky(H_dd + lam * np.eye(de - ds))
        except np.linalg.LinAlgError:
            return None
    rhs = np.column_stack([H_kd.T, b_d])
    sol = scipy.linalg.cho_solve((chol, True), rhs)
    H_marg = H_kk - H_kd @ sol[:, :-1]
    b_marg = b_k - H_kd @ sol[:, -1]
    H_marg = 0.5 * (H_marg + H_marg.T)
    mu = np.linalg.pinv(H_marg) @ b_marg
    return MarginalPrior(H=H_marg, b=b_marg, mu=mu, anchor_frame=anchor_frame, damped=damped)
