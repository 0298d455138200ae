"""Synthetic stereo scene simulator.

Generates ground-truth trajectories of textured cuboid objects, renders
rectified stereo intensity grids by ray casting, and emits the per-object
dense cue records the tracker consumes: sampled foreground pixels with local
depth and local (object-frame) coordinates, a projected centroid, an
observation angle, paired 2D boxes and an initial regressed 3D box.

Surface samples are attached to each object (fixed points on the cuboid
faces), so the same physical point keeps identical local coordinates across
frames at zero noise. Per-frame visibility filtering then mimics a
segmentation mask: points must face the camera, project inside the image,
and keep an interpolation-clean neighbourhood in both views.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from stereotrack import kernels
from stereotrack.geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    ObjectState,
    StereoRig,
    alpha_from_theta,
    box_to_box2d,
    project,
    rotation_about_y,
    wrap_angle,
)

__all__ = [
    "CoordinateMapPatch",
    "DenseCueFrame",
    "NoiseConfig",
    "ObjectTrackSpec",
    "RenderProducts",
    "SamplingParams",
    "Scenario",
    "ScenarioError",
    "StereoFrame",
    "TextureParams",
    "generate_scenario",
    "occlusion_cull",
    "render_frame",
    "render_frame_products",
    "silhouette_cull",
]


class ScenarioError(ValueError):
    """Raised for invalid scenario specs or rendering preconditions."""


# --------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian corruption applied to cue fields after exact construction.

    Sigmas are in the natural unit of each field. Draws are clipped at
    clip_sigmas standard deviations (None disables clipping) so bounded
    perturbation claims stay bounded. The seed drives every noise stream;
    per-frame, per-object substreams keep records independent of iteration
    order. Defaults are calibration knobs for the synthetic benchmark, not
    measured quantities.
    """

    local_depth: float = 0.05
    local_coords: float = 0.03
    centroid_projection: float = 4.0
    observation_angle: float = 0.12
    initial_position: float = 0.6
    initial_yaw: float = 0.15
    box2d: float = 1.0
    image_intensity: float = 0.005
    clip_sigmas: float | None = 4.0
    seed: int = 0

    @staticmethod
    def zero(seed: int = 0) -> "NoiseConfig":
        return NoiseConfig(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, None, seed)


@dataclass(frozen=True)
class TextureParams:
    """Procedural surface texture: a sum of sinusoids of local coordinates.

    Wavelengths are long enough that bilinear lookups on the rendered pixel
    grid stay well under the photometric noise floor at the depths the
    benchmark uses.
    """

    base: float = 0.55
    amplitudes: tuple[float, ...] = (0.24, 0.09)
    wavelengths: tuple[float, ...] = (1.9, 0.75)
    directions: tuple[tuple[float, float, float], ...] = (
        (0.93, 0.26, 0.26),
        (-0.33, 0.84, 0.43),
    )

    def wave_vectors(self) -> np.ndarray:
        dirs = np.asarray(self.directions, dtype=np.float64)
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        return dirs / np.asarray(self.wavelengths, dtype=np.float64)[:, None]


@dataclass(frozen=True)
class SamplingParams:
    """Surface sampling density and cue-quality filters."""

    per_face: int = 40
    max_pixels: int = 1000
    edge_margin_px: float = 3.0
    min_incidence: float = 0.5
    window_radius: int = 2
    face_inset: float = 0.06
    cull_radius_px: float = 6.0
    cull_depth_margin: float = 0.1
    coord_map_hole_px: float = 4.0


# --------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class ObjectTrackSpec:
    """One object's ground truth: dimensions and a per-frame state table."""

    track_id: int
    dims: tuple[float, float, float]  # width, height, length
    states: tuple[ObjectState | None, ...]
    texture_phases: tuple[float, ...]
    surface_points: np.ndarray  # (m, 3) object-frame points
    surface_normals: np.ndarray  # (m, 3) outward unit normals
    surface_faces: np.ndarray  # (m,) face index 0..5

    def box_at(self, frame: int) -> Box3D | None:
        state = self.states[frame]
        if state is None:
            return None
        return Box3D(state, *self.dims)


@dataclass(frozen=True)
class Scenario:
    """Concrete ground truth for one sequence plus rendering parameters."""

    rig: StereoRig
    frames: int
    dt: float
    objects: tuple[ObjectTrackSpec, ...]
    texture: TextureParams
    sampling: SamplingParams
    spec: dict = field(repr=False, default_factory=dict)
    seed: int = 0


# --------------------------------------------------------------------------
# data products


@dataclass(frozen=True)
class StereoFrame:
    """One rectified stereo pair as continuous intensity grids in [0, 1]."""

    frame_index: int
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        if self.left.shape != self.right.shape or self.left.ndim != 2:
            raise ScenarioError("stereo grids must share one 2D shape")
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise ScenarioError("intensity grids must be finite")


@dataclass(frozen=True)
class DenseCueFrame:
    """Per-object dense cues for one frame, the tracker's observation unit.

    gt_track is bookkeeping from the simulator; the tracker assigns its own
    identities and never reads it.
    """

    frame_index: int
    gt_track: int
    pixels: np.ndarray  # (n, 2) float pixel positions in the left image
    local_depth: np.ndarray  # (n,) point depth minus centroid depth
    local_coords: np.ndarray  # (n, 3) object-frame coordinates
    centroid_projection: np.ndarray  # (2,)
    observation_angle: float
    box2d_current: Box2D
    box2d_previous: Box2D | None
    initial_box: Box3D
    coord_patch: "CoordinateMapPatch | None" = None

    def __post_init__(self):
        n = self.pixels.shape[0]
        if n == 0:
            raise ScenarioError("cue frame requires at least one pixel")
        if self.local_depth.shape != (n,) or self.local_coords.shape != (n, 3):
            raise ScenarioError("cue arrays must share one length")
        for arr in (self.pixels, self.local_depth, self.local_coords, self.centroid_projection):
            if not np.all(np.isfinite(arr)):
                raise ScenarioError("cue arrays must be finite")

    @property
    def n_pixels(self) -> int:
        return int(self.pixels.shape[0])


@dataclass
class CoordinateMapPatch:
    """Dense local-coordinate map over an object's image support.

    values[i, j] holds the object-frame coordinates of the surface point seen
    at pixel (origin_u + j, origin_v + i); valid marks pixels where the
    object is the nearest surface. Queries on fully valid bilinear cells are
    interpolated with an analytic gradient; queries in small holes fall back
    to the nearest valid pixel with a zero gradient; queries farther than
    max_hole_px from any valid pixel are rejected.
    """

    origin_u: int
    origin_v: int
    values: np.ndarray  # (h, w, 3)
    valid: np.ndarray  # (h, w) bool
    max_hole_px: float = 4.0

    def __post_init__(self):
        self._hole_dist, self._hole_idx = ndimage.distance_transform_edt(
            ~self.valid, return_indices=True
        )

    def sample_with_grad(self, u: np.ndarray, v: np.ndarray):
        """Sample at pixel positions; returns (values (k,3), grad (k,3,2), ok (k,))."""
        h, w = self.valid.shape
        uu = np.asarray(u, dtype=np.float64) - self.origin_u
        vv = np.asarray(v, dtype=np.float64) - self.origin_v
        k = uu.shape[0]
        vals = np.zeros((k, 3))
        grad = np.zeros((k, 3, 2))
        ok = np.zeros(k, dtype=bool)
        in_bounds = (uu >= 0) & (uu <= w - 1) & (vv >= 0) & (vv <= h - 1)
        if not np.any(in_bounds):
            return vals, grad, ok
        j0 = np.clip(np.floor(uu), 0, w - 2).astype(np.int64)
        i0 = np.clip(np.floor(vv), 0, h - 2).astype(np.int64)
        cell_ok = (
            in_bounds
            & self.valid[i0, j0]
            & self.valid[i0, j0 + 1]
            & self.valid[i0 + 1, j0]
            & self.valid[i0 + 1, j0 + 1]
        )
        if np.any(cell_ok):
            sel = np.where(cell_ok)[0]
            for c in range(3):
                val, du, dv = kernels.bilinear_sample_grad(
                    np.ascontiguousarray(self.values[:, :, c]), uu[sel], vv[sel]
                )
                vals[sel, c] = val
                grad[sel, c, 0] = du
                grad[sel, c, 1] = dv
            ok[cell_ok] = True
        # Hole fallback: nearest valid pixel value, zero gradient.
        rest = in_bounds & ~cell_ok
        if np.any(rest):
            sel = np.where(rest)[0]
            ri = np.clip(np.rint(vv[sel]), 0, h - 1).astype(np.int64)
            rj = np.clip(np.rint(uu[sel]), 0, w - 1).astype(np.int64)
            dist = self._hole_dist[ri, rj]
            near_i = self._hole_idx[0][ri, rj]
            near_j = self._hole_idx[1][ri, rj]
            usable = dist <= self.max_hole_px
            take = sel[usable]
            vals[take] = self.values[near_i[usable], near_j[usable]]
            ok[take] = True
        return vals, grad, ok


@dataclass(frozen=True)
class RenderProducts:
    """Everything one frame render produces."""

    stereo: StereoFrame
    cues: tuple[DenseCueFrame, ...]
    coord_maps: dict  # gt track id -> CoordinateMapPatch
    id_map: np.ndarray  # (H, W) nearest object index into scenario.objects, -1 none
    depth_map: np.ndarray  # (H, W) depth of the nearest surface, 0 where empty


# --------------------------------------------------------------------------
# scenario construction

_CAR_DIMS = ((1.6, 2.0), (1.35, 1.7), (3.8, 4.7))

_FACE_AXES = ((0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1))


def _substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def _surface_points(dims, per_face: int, inset: float, rng) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jittered grids of attached points on all six faces of a cuboid."""
    half = 0.5 * np.asarray(dims)
    g = max(2, math.ceil(math.sqrt(per_face)))
    pts = []
    normals = []
    faces = []
    lin = (np.arange(g) + 0.5) / g
    for face_idx, (axis, sign) in enumerate(_FACE_AXES):
        a1, a2 = [a for a in range(3) if a != axis]
        u1, u2 = np.meshgrid(lin, lin)
        jitter = rng.uniform(-0.35 / g, 0.35 / g, size=(2, g, g))
        c1 = (inset + (1 - 2 * inset) * (u1 + jitter[0])) * 2 - 1
        c2 = (inset + (1 - 2 * inset) * (u2 + jitter[1])) * 2 - 1
        p = np.zeros((g * g, 3))
        p[:, axis] = sign * half[axis]
        p[:, a1] = np.clip(c1.ravel(), -1 + inset, 1 - inset) * half[a1]
        p[:, a2] = np.clip(c2.ravel(), -1 + inset, 1 - inset) * half[a2]
        n = np.zeros((g * g, 3))
        n[:, axis] = sign
        pts.append(p)
        normals.append(n)
        faces.append(np.full(g * g, face_idx, dtype=np.int64))
    return np.concatenate(pts), np.concatenate(normals), np.concatenate(faces)


def _require_keys(d: dict, allowed: set, context: str):
    unknown = set(d) - allowed
    if unknown:
        raise ScenarioError(f"unknown keys in {context}: {sorted(unknown)}")


def _build_states(obj: dict, frames: int, dt: float, track: int) -> list[ObjectState | None]:
    start = [float(x) for x in obj["start"]]
    vel = [float(x) for x in obj.get("velocity", (0.0, 0.0, 0.0))]
    yaw_rate = float(obj.get("yaw_rate", 0.0))
    appear = int(obj.get("appear", 0))
    vanish = obj.get("vanish")
    vanish = frames if vanish is None else int(vanish)
    states: list[ObjectState | None] = []
    for f in range(frames):
        if f < appear or f >= vanish:
            states.append(None)
            continue
        k = f - appear
        pos = np.array(
            [start[0] + vel[0] * dt * k, start[1] + vel[1] * dt * k, start[2] + vel[2] * dt * k]
        )
        if pos[2] <= 0:
            raise ScenarioError(
                f"object {track} has non-positive depth {pos[2]:.3f} at frame {f}"
            )
        states.append(ObjectState(pos, wrap_angle(start[3] + yaw_rate * dt * k)))
    return states


def _sample_random_objects(cfg: dict, rng, next_id: int) -> list[dict]:
    _require_keys(
        cfg,
        {"count", "x", "y", "z", "speed", "yaw", "yaw_rate", "toward_fraction"},
        "random_objects",
    )
    count = int(cfg["count"])
    x_rng = cfg.get("x", (-5.0, 5.0))
    y_rng = cfg.get("y", (0.6, 1.0))
    z_rng = cfg.get("z", (9.0, 26.0))
    speed_rng = cfg.get("speed", (1.0, 8.0))
    yaw_rng = cfg.get("yaw", (-0.35, 0.35))
    yaw_rate_rng = cfg.get("yaw_rate", (-0.05, 0.05))
    toward = float(cfg.get("toward_fraction", 0.5))
    objects = []
    positions: list[np.ndarray] = []
    for i in range(count):
        for _ in range(60):
            pos = np.array(
                [
                    rng.uniform(*x_rng),
                    rng.uniform(*y_rng),
                    rng.uniform(*z_rng),
                ]
            )
            if all(np.linalg.norm(pos - p) > 3.0 for p in positions):
                break
        positions.append(pos)
        yaw = rng.uniform(*yaw_rng)
        if rng.uniform() < toward:
            yaw = wrap_angle(yaw + math.pi)
        speed = rng.uniform(*speed_rng)
        dims = tuple(rng.uniform(lo, hi) for lo, hi in _CAR_DIMS)
        objects.append(
            {
                "id": next_id + i,
                "dims": list(dims),
                "start": [pos[0], pos[1], pos[2], yaw],
                "velocity": [speed * math.sin(yaw), 0.0, speed * math.cos(yaw)],
                "yaw_rate": rng.uniform(*yaw_rate_rng),
            }
        )
    return objects


def generate_scenario(spec: dict, seed: int) -> Scenario:
    """Build concrete per-frame ground truth from a scenario spec dict.

    The spec is the parsed form of the versioned scenario file; unknown keys
    are rejected. Randomized content (random_objects, texture phases, surface
    sample jitter) is drawn from substreams of the seed, so equal
    (spec, seed) pairs produce identical scenarios.
    """
    if not isinstance(spec, dict):
        raise ScenarioError("scenario spec must be a mapping")
    _require_keys(
        spec,
        {"version", "rig", "frames", "dt", "objects", "random_objects", "texture", "sampling"},
        "scenario spec",
    )
    if int(spec.get("version", 0)) != 1:
        raise ScenarioError("scenario spec version must be 1")
    rig_cfg = dict(spec.get("rig", {}))
    _require_keys(
        rig_cfg, {"fx", "fy", "cx", "cy", "width", "height", "baseline"}, "rig"
    )
    try:
        intr = CameraIntrinsics(
            fx=float(rig_cfg.get("fx", 700.0)),
            fy=float(rig_cfg.get("fy", 700.0)),
            cx=float(rig_cfg.get("cx", 320.0)),
            cy=float(rig_cfg.get("cy", 120.0)),
            width=int(rig_cfg.get("width", 640)),
            height=int(rig_cfg.get("height", 240)),
        )
        rig = StereoRig(intr, float(rig_cfg.get("baseline", 0.54)))
    except ValueError as exc:
        raise ScenarioError(f"invalid rig: {exc}") from exc
    if rig.baseline <= 0:
        raise ScenarioError("simulator requires a positive baseline")
    frames = int(spec.get("frames", 10))
    if frames < 1:
        raise ScenarioError("frames must be >= 1")
    dt = float(spec.get("dt", 0.1))
    if dt <= 0:
        raise ScenarioError("dt must be positive")

    tex_cfg = dict(spec.get("texture", {}))
    _require_keys(
        tex_cfg, {"base", "amplitudes", "wavelengths", "directions"}, "texture"
    )
    texture = TextureParams(
        base=float(tex_cfg.get("base", TextureParams.base)),
        amplitudes=tuple(tex_cfg.get("amplitudes", TextureParams.amplitudes)),
        wavelengths=tuple(tex_cfg.get("wavelengths", TextureParams.wavelengths)),
        directions=tuple(
            tuple(d) for d in tex_cfg.get("directions", TextureParams.directions)
        ),
    )
    if len(texture.amplitudes) != len(texture.wavelengths) or len(
        texture.amplitudes
    ) != len(texture.directions):
        raise ScenarioError("texture component lists must share one length")

    samp_cfg = dict(spec.get("sampling", {}))
    _require_keys(
        samp_cfg,
        {
            "per_face",
            "max_pixels",
            "edge_margin_px",
            "min_incidence",
            "window_radius",
            "face_inset",
            "cull_radius_px",
            "cull_depth_margin",
            "coord_map_hole_px",
        },
        "sampling",
    )
    sampling = SamplingParams(**{k: type(getattr(SamplingParams, k))(v) for k, v in samp_cfg.items()})

    raw_objects = [dict(o) for o in spec.get("objects", [])]
    for o in raw_objects:
        _require_keys(
            o, {"id", "dims", "start", "velocity", "yaw_rate", "appear", "vanish"}, "object"
        )
    if "random_objects" in spec:
        next_id = max((int(o["id"]) for o in raw_objects), default=-1) + 1
        raw_objects.extend(
            _sample_random_objects(dict(spec["random_objects"]), _substream(seed, 0), next_id)
        )
    if not raw_objects:
        raise ScenarioError("scenario defines no objects")
    ids = [int(o["id"]) for o in raw_objects]
    if len(set(ids)) != len(ids):
        raise ScenarioError("object ids must be unique")

    objects = []
    for o in sorted(raw_objects, key=lambda d: int(d["id"])):
        track = int(o["id"])
        dims = tuple(float(x) for x in o["dims"])
        if min(dims) <= 0:
            raise ScenarioError(f"object {track} has non-positive dimensions")
        states = _build_states(o, frames, dt, track)
        if not any(s is not None for s in states):
            raise ScenarioError(f"object {track} is never present")
        phase_rng = _substream(seed, 3, track)
        phases = tuple(phase_rng.uniform(0.0, 2 * math.pi, len(texture.amplitudes)))
        pts, normals, faces = _surface_points(
            dims, sampling.per_face, sampling.face_inset, _substream(seed, 4, track)
        )
        objects.append(
            ObjectTrackSpec(
                track_id=track,
                dims=dims,
                states=tuple(states),
                texture_phases=phases,
                surface_points=pts,
                surface_normals=normals,
                surface_faces=faces,
            )
        )
    return Scenario(
        rig=rig,
        frames=frames,
        dt=dt,
        objects=tuple(objects),
        texture=texture,
        sampling=sampling,
        spec=spec,
        seed=seed,
    )


# --------------------------------------------------------------------------
# rendering

_DIRS_CACHE: dict = {}


def _pixel_dirs(intr: CameraIntrinsics) -> np.ndarray:
    key = (intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height)
    cached = _DIRS_CACHE.get(key)
    if cached is None:
        u = np.arange(intr.width, dtype=np.float64)
        v = np.arange(intr.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        cached = np.stack(
            [
                (uu.ravel() - intr.cx) / intr.fx,
                (vv.ravel() - intr.cy) / intr.fy,
                np.ones(intr.width * intr.height),
            ],
            axis=1,
        )
        _DIRS_CACHE[key] = cached
    return cached


def texture_intensity(local: np.ndarray, phases, texture: TextureParams) -> np.ndarray:
    """Evaluate the procedural texture at object-frame points."""
    pts = np.atleast_2d(np.asarray(local, dtype=np.float64))
    wave = texture.wave_vectors()
    out = np.full(pts.shape[0], texture.base)
    for amp, k_vec, phase in zip(texture.amplitudes, wave, phases):
        out = out + amp * np.sin(2 * math.pi * (pts @ k_vec) + phase)
    return out


def _background(intr: CameraIntrinsics) -> np.ndarray:
    u = np.arange(intr.width, dtype=np.float64)
    v = np.arange(intr.height, dtype=np.float64)
    uu, vv = np.meshgrid(u, v)
    return 0.45 + 0.04 * np.sin(0.09 * uu + 0.13 * vv) + 0.03 * np.sin(0.05 * uu - 0.07 * vv)


def _clipped_normal(rng, size, sigma: float, clip: float | None) -> np.ndarray:
    draw = rng.standard_normal(size)
    if clip is not None:
        draw = np.clip(draw, -clip, clip)
    return draw * sigma


def _face_of_local(local: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Face index (matching _FACE_AXES order) of surface points."""
    ratio = np.abs(local) / half
    axis = np.argmax(ratio, axis=1)
    sign = np.take_along_axis(local, axis[:, None], axis=1)[:, 0] >= 0
    return axis * 2 + (~sign).astype(np.int64)


def _render_camera(scenario: Scenario, origin: np.ndarray, present):
    """Ray cast one camera; returns (intensity, obj index map, depth, local map)."""
    intr = scenario.rig.intrinsics
    dirs = _pixel_dirs(intr)
    if present:
        rot = np.stack([rotation_about_y(o_state.yaw) for _, o_state in present])
        pos = np.stack([o_state.position for _, o_state in present])
        half = np.stack(
            [0.5 * np.asarray(scenario.objects[oi].dims) for oi, _ in present]
        )
        idx, t, local = kernels.raycast_boxes(origin, dirs, rot, pos, half)
    else:
        n = dirs.shape[0]
        idx = np.full(n, -1, np.int32)
        t = np.zeros(n)
        local = np.zeros((n, 3))
    shape = (intr.height, intr.width)
    intensity = _background(intr).copy()
    flat = intensity.ravel()
    for slot, (obj_index, _) in enumerate(present):
        mask = idx == slot
        if np.any(mask):
            obj = scenario.objects[obj_index]
            flat[mask] = texture_intensity(local[mask], obj.texture_phases, scenario.texture)
    # Map per-camera slots to scenario object indices.
    obj_map = np.full(idx.shape, -1, np.int32)
    for slot, (obj_index, _) in enumerate(present):
        obj_map[idx == slot] = obj_index
    return (
        intensity,
        obj_map.reshape(shape),
        t.reshape(shape),
        local.reshape((*shape, 3)),
    )


def _window_same_face(
    point_face: np.ndarray,
    pix: np.ndarray,
    origin: np.ndarray,
    rot_m: np.ndarray,
    pos: np.ndarray,
    half: np.ndarray,
    intr: CameraIntrinsics,
    radius: int,
) -> np.ndarray:
    """True where every integer pixel in a window around pix hits the same face.

    Keeps bilinear stencils (and small warp drifts during optimization) on a
    single smooth surface patch of the object's own box.
    """
    n = pix.shape[0]
    offsets = [
        (di, dj)
        for di in range(-radius, radius + 1)
        for dj in range(-radius, radius + 1)
    ]
    base = np.rint(pix)
    ok = np.ones(n, dtype=bool)
    rot_batch = rot_m[None]
    pos_batch = pos[None]
    half_batch = half[None]
    for dj, di in offsets:
        u = base[:, 0] + dj
        v = base[:, 1] + di
        dirs = np.stack(
            [(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(n)], axis=1
        )
        idx, _, local = kernels.raycast_boxes(origin, dirs, rot_batch, pos_batch, half_batch)
        hit = idx == 0
        faces = np.full(n, -1, np.int64)
        if np.any(hit):
            faces[hit] = _face_of_local(local[hit], half)
        ok &= hit & (faces == point_face)
        if not np.any(ok):
            break
    return ok


def _visible_samples(scenario: Scenario, obj: ObjectTrackSpec, state: ObjectState):
    """Per-frame visibility filter over an object's attached surface points.

    Returns (pixels (n,2), depths (n,), local coords (n,3)) of the surviving
    points in the left image.
    """
    rig = scenario.rig
    intr = rig.intrinsics
    samp = scenario.sampling
    rot_m = rotation_about_y(state.yaw)
    pts_cam = obj.surface_points @ rot_m.T + state.position
    z = pts_cam[:, 2]
    keep = z > 0.25
    if not np.any(keep):
        return None
    # Orientation: outward normal must face the camera and not graze it.
    normals_cam = obj.surface_normals @ rot_m.T
    view = pts_cam / np.linalg.norm(pts_cam, axis=1, keepdims=True)
    cos_inc = -np.sum(normals_cam * view, axis=1)
    keep &= cos_inc >= samp.min_incidence
    if not np.any(keep):
        return None
    pix = np.zeros((pts_cam.shape[0], 2))
    pix[keep] = project(pts_cam[keep], intr)
    m = float(samp.edge_margin_px)
    keep &= (
        (pix[:, 0] >= m)
        & (pix[:, 0] <= intr.width - 1 - m)
        & (pix[:, 1] >= m)
        & (pix[:, 1] <= intr.height - 1 - m)
    )
    if not np.any(keep):
        return None
    # Right-view projection must also stay inside the image.
    pts_right = pts_cam + rig.stereo_translation
    pix_r = project(np.where(keep[:, None], pts_right, [0.0, 0.0, 1.0]), intr)
    keep &= (
        (pix_r[:, 0] >= m)
        & (pix_r[:, 0] <= intr.width - 1 - m)
        & (pix_r[:, 1] >= m)
        & (pix_r[:, 1] <= intr.height - 1 - m)
    )
    idx_keep = np.where(keep)[0]
    if idx_keep.size == 0:
        return None
    half = 0.5 * np.asarray(obj.dims)
    faces = obj.surface_faces[idx_keep]
    # Self-occlusion plus interpolation-clean windows in both views.
    left_ok = _window_same_face(
        faces,
        pix[idx_keep],
        np.zeros(3),
        rot_m,
        state.position,
        half,
        intr,
        samp.window_radius,
    )
    idx_keep = idx_keep[left_ok]
    if idx_keep.size == 0:
        return None
    right_origin = np.array([rig.baseline, 0.0, 0.0])
    right_ok = _window_same_face(
        obj.surface_faces[idx_keep],
        pix_r[idx_keep],
        right_origin,
        rot_m,
        state.position,
        half,
        intr,
        samp.window_radius,
    )
    idx_keep = idx_keep[right_ok]
    if idx_keep.size == 0:
        return None
    if idx_keep.size > samp.max_pixels:
        sel = np.linspace(0, idx_keep.size - 1, samp.max_pixels).astype(np.int64)
        idx_keep = idx_keep[np.unique(sel)]
    return (
        pix[idx_keep],
        pts_cam[idx_keep, 2],
        obj.surface_points[idx_keep].copy(),
    )


def _noisy_box2d(box: Box2D, rng, sigma: float, clip: float | None) -> Box2D:
    if sigma == 0:
        return box
    d = _clipped_normal(rng, 4, sigma, clip)
    x0 = box.x_min + d[0]
    y0 = box.y_min + d[1]
    x1 = box.x_max + d[2]
    y1 = box.y_max + d[3]
    if x1 <= x0:
        x0, x1 = min(x0, x1) - 0.5, max(x0, x1) + 0.5
    if y1 <= y0:
        y0, y1 = min(y0, y1) - 0.5, max(y0, y1) + 0.5
    return Box2D(x0, y0, x1, y1)


def _make_cue(
    scenario: Scenario,
    obj: ObjectTrackSpec,
    frame: int,
    noise: NoiseConfig,
    prev_box: Box2D | None,
):
    state = obj.states[frame]
    if state is None:
        return None
    vis = _visible_samples(scenario, obj, state)
    if vis is None:
        return None
    pixels, depths, local = vis
    intr = scenario.rig.intrinsics
    centroid = project(state.position, intr)
    alpha = alpha_from_theta(state.yaw, state.position)
    box3d = Box3D(state, *obj.dims)
    box2d = box_to_box2d(box3d, intr)
    if box2d is None:
        return None
    clip = noise.clip_sigmas
    pix_rng = _substream(noise.seed, 2, frame, obj.track_id, 0)
    n = pixels.shape[0]
    local_depth = depths - state.position[2]
    local_depth = local_depth + _clipped_normal(pix_rng, n, noise.local_depth, clip)
    local_noisy = local + _clipped_normal(pix_rng, (n, 3), noise.local_coords, clip)
    obj_rng = _substream(noise.seed, 2, frame, obj.track_id, 1)
    centroid_noisy = centroid + _clipped_normal(obj_rng, 2, noise.centroid_projection, clip)
    alpha_noisy = wrap_angle(alpha + float(_clipped_normal(obj_rng, 1, noise.observation_angle, clip)[0]))
    init_pos = state.position + _clipped_normal(obj_rng, 3, noise.initial_position, clip)
    if init_pos[2] <= 0.25:
        init_pos = init_pos.copy()
        init_pos[2] = 0.25
    init_yaw = wrap_angle(state.yaw + float(_clipped_normal(obj_rng, 1, noise.initial_yaw, clip)[0]))
    box2d_noisy = _noisy_box2d(box2d, obj_rng, noise.box2d, clip)
    return DenseCueFrame(
        frame_index=frame,
        gt_track=obj.track_id,
        pixels=pixels,
        local_depth=local_depth,
        local_coords=local_noisy,
        centroid_projection=centroid_noisy,
        observation_angle=alpha_noisy,
        box2d_current=box2d_noisy,
        box2d_previous=prev_box,
        initial_box=Box3D(ObjectState(init_pos, init_yaw), *obj.dims),
    )


def _noisy_current_box(scenario: Scenario, obj: ObjectTrackSpec, frame: int, noise: NoiseConfig) -> Box2D | None:
    """Recompute the noisy 2D box an object got at a frame (same realization)."""
    if frame < 0 or frame >= scenario.frames:
        return None
    state = obj.states[frame]
    if state is None:
        return None
    box2d = box_to_box2d(Box3D(state, *obj.dims), scenario.rig.intrinsics)
    if box2d is None:
        return None
    obj_rng = _substream(noise.seed, 2, frame, obj.track_id, 1)
    # Reproduce the draw order of _make_cue: centroid (2), alpha (1),
    # init pos (3), init yaw (1), then the box corners.
    _clipped_normal(obj_rng, 2, noise.centroid_projection, noise.clip_sigmas)
    _clipped_normal(obj_rng, 1, noise.observation_angle, noise.clip_sigmas)
    _clipped_normal(obj_rng, 3, noise.initial_position, noise.clip_sigmas)
    _clipped_normal(obj_rng, 1, noise.initial_yaw, noise.clip_sigmas)
    return _noisy_box2d(box2d, obj_rng, noise.box2d, noise.clip_sigmas)


def _coordinate_patch(
    scenario: Scenario,
    obj_index: int,
    id_map: np.ndarray,
    local_map: np.ndarray,
    frame: int,
    noise: NoiseConfig,
) -> CoordinateMapPatch | None:
    valid_full = id_map == obj_index
    if not np.any(valid_full):
        return None
    rows = np.any(valid_full, axis=1)
    cols = np.any(valid_full, axis=0)
    i0, i1 = np.where(rows)[0][[0, -1]]
    j0, j1 = np.where(cols)[0][[0, -1]]
    samp = scenario.sampling
    pad = int(math.ceil(samp.coord_map_hole_px)) + 1
    i0 = max(0, i0 - pad)
    j0 = max(0, j0 - pad)
    i1 = min(id_map.shape[0] - 1, i1 + pad)
    j1 = min(id_map.shape[1] - 1, j1 + pad)
    valid = valid_full[i0 : i1 + 1, j0 : j1 + 1].copy()
    values = local_map[i0 : i1 + 1, j0 : j1 + 1].copy()
    values[~valid] = 0.0
    if noise.local_coords > 0:
        track = scenario.objects[obj_index].track_id
        rng = _substream(noise.seed, 2, frame, track, 2)
        raw = rng.standard_normal(values.shape)
        blur = 2.0
        smooth = np.stack(
            [ndimage.gaussian_filter(raw[:, :, c], sigma=blur) for c in range(3)],
            axis=2,
        )
        # A sigma=blur filter shrinks a unit field's std to 1/(2*blur*sqrt(pi));
        # rescale so the marginal std matches the configured sigma.
        values = values + smooth * (noise.local_coords * 2.0 * blur * math.sqrt(math.pi))
    return CoordinateMapPatch(
        origin_u=int(j0),
        origin_v=int(i0),
        values=values,
        valid=valid,
        max_hole_px=samp.coord_map_hole_px,
    )


def render_frame_products(scenario: Scenario, frame: int, noise: NoiseConfig) -> RenderProducts:
    """Render one frame completely: stereo grids, cue records and coord maps.

    Occlusion culling over the sampled pixels is applied before the cues are
    returned, so objects fully covered by nearer ones drop out here.
    """
    if not 0 <= frame < scenario.frames:
        raise ScenarioError(f"frame {frame} outside 0..{scenario.frames - 1}")
    present = [
        (i, obj.states[frame])
        for i, obj in enumerate(scenario.objects)
        if obj.states[frame] is not None
    ]
    rig = scenario.rig
    intr = rig.intrinsics
    left, id_map, depth_map, local_map = _render_camera(scenario, np.zeros(3), present)
    right, _, _, _ = _render_camera(
        scenario, np.array([rig.baseline, 0.0, 0.0]), present
    )
    if noise.image_intensity > 0:
        img_rng = _substream(noise.seed, 1, frame)
        left = left + _clipped_normal(
            img_rng, left.shape, noise.image_intensity, noise.clip_sigmas
        )
        right = right + _clipped_normal(
            img_rng, right.shape, noise.image_intensity, noise.clip_sigmas
        )
    left = np.clip(left, 0.0, 1.0)
    right = np.clip(right, 0.0, 1.0)
    stereo = StereoFrame(frame_index=frame, left=left, right=right)

    cues = []
    for obj in scenario.objects:
        if obj.states[frame] is None:
            continue
        prev_box = _noisy_current_box(scenario, obj, frame - 1, noise)
        cue = _make_cue(scenario, obj, frame, noise, prev_box)
        if cue is not None:
            cues.append(cue)
    cues = occlusion_cull(
        cues,
        radius_px=scenario.sampling.cull_radius_px,
        depth_margin=scenario.sampling.cull_depth_margin,
        baseline_px=intr.fx * rig.baseline,
    )
    true_boxes = {
        obj.track_id: obj.box_at(frame)
        for obj in scenario.objects
        if obj.states[frame] is not None
    }
    cues = silhouette_cull(
        rig, true_boxes, cues, depth_margin=scenario.sampling.cull_depth_margin
    )
    coord_maps = {}
    for i, obj in enumerate(scenario.objects):
        if obj.states[frame] is None:
            continue
        patch = _coordinate_patch(scenario, i, id_map, local_map, frame, noise)
        if patch is not None:
            coord_maps[obj.track_id] = patch
    cues = [
        replace(cue, coord_patch=coord_maps.get(cue.gt_track)) for cue in cues
    ]
    return RenderProducts(
        stereo=stereo,
        cues=tuple(cues),
        coord_maps=coord_maps,
        id_map=id_map,
        depth_map=depth_map,
    )


def render_frame(scenario: Scenario, frame: int, noise: NoiseConfig):
    """Render one frame; returns (StereoFrame, list of DenseCueFrame)."""
    products = render_frame_products(scenario, frame, noise)
    return products.stereo, list(products.cues)


def silhouette_cull(rig: StereoRig, boxes: dict, cues, pad_px: float = 1.0, depth_margin: float = 0.1):
    """Drop pixels that fall inside a strictly nearer object's projected box.

    Sample-based culling only sees the occluder where the occluder itself has
    samples; stretches of its outline backed by grazing faces carry none, so
    covered pixels can leak through there. Projected corner boxes of the true
    states close that gap. Both views are tested: a pixel surviving past an
    occluder's edge in the left view may still sit behind it in the right one.

    boxes maps gt track id to the true Box3D of every object in the frame.
    """
    intr = rig.intrinsics
    fxb = intr.fx * rig.baseline
    right_shift = np.array([rig.baseline, 0.0, 0.0])
    sil = {}
    for tid, box in boxes.items():
        box_r = Box3D(
            ObjectState(box.state.position - right_shift, box.state.yaw), *box.dims
        )
        b_l = box_to_box2d(box, intr, clip=False)
        b_r = box_to_box2d(box_r, intr, clip=False)
        if b_l is None or b_r is None:
            continue
        sil[tid] = (b_l, b_r, float(box.corners()[:, 2].min()))

    def inside(b: Box2D, u, v):
        return (
            (u >= b.x_min - pad_px)
            & (u <= b.x_max + pad_px)
            & (v >= b.y_min - pad_px)
            & (v <= b.y_max + pad_px)
        )

    kept = []
    for cue in cues:
        z = cue.local_depth + boxes[cue.gt_track].state.position[2]
        u_l, v = cue.pixels[:, 0], cue.pixels[:, 1]
        u_r = u_l - fxb / z
        alive = np.ones(cue.n_pixels, dtype=bool)
        for tid, (b_l, b_r, z_front) in sil.items():
            if tid == cue.gt_track:
                continue
            behind = z > z_front + depth_margin
            alive &= ~(behind & (inside(b_l, u_l, v) | inside(b_r, u_r, v)))
        if np.any(alive):
            kept.append(
                replace(
                    cue,
                    pixels=cue.pixels[alive],
                    local_depth=cue.local_depth[alive],
                    local_coords=cue.local_coords[alive],
                )
            )
    return kept


def occlusion_cull(
    cues,
    radius_px: float = 6.0,
    depth_margin: float = 0.1,
    baseline_px: float | None = None,
):
    """Remove sampled pixels of farther objects covered by nearer footprints.

    Z-buffer over the sampled pixels: a pixel dies when another object has a
    sampled pixel within radius_px whose depth is closer by more than
    depth_margin. Objects whose pixel list empties are dropped entirely.
    Depths come from each cue's local depth plus its initial box depth, the
    best estimate available at simulation output.

    baseline_px is fx times the stereo baseline; when given, the same test
    runs again at disparity-shifted positions, so pixels a nearer object
    covers only in the right view die too. Without it a pixel seen past an
    occluder's edge in the left view survives even though the right view
    shows the occluder there, and such half-covered pixels poison any
    left-to-right matching done downstream.
    """
    kept = []
    cue_list = list(cues)
    depths = [
        cue.local_depth + cue.initial_box.state.position[2] for cue in cue_list
    ]
    r_sq = radius_px * radius_px
    for i, cue in enumerate(cue_list):
        alive = np.ones(cue.n_pixels, dtype=bool)
        for j, other in enumerate(cue_list):
            if i == j:
                continue
            du = cue.pixels[:, 0:1] - other.pixels[None, :, 0]
            dv = cue.pixels[:, 1:2] - other.pixels[None, :, 1]
            near = (du * du + dv * dv) <= r_sq
            if baseline_px is not None:
                shift = baseline_px / depths[i][:, None] - baseline_px / depths[j][None, :]
                du_r = du - shift
                near |= (du_r * du_r + dv * dv) <= r_sq
            closer = depths[j][None, :] < (depths[i][:, None] - depth_margin)
            alive &= ~np.any(near & closer, axis=1)
            if not np.any(alive):
                break
        if np.any(alive):
            kept.append(
                replace(
                    cue,
                    pixels=cue.pixels[alive],
                    local_depth=cue.local_depth[alive],
                    local_coords=cue.local_coords[alive],
                )
            )
    return kept
