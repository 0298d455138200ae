"""Camera model, object pose and box algebra, and overlap measures.

Conventions used across the package: right-handed camera frame with x right,
y down and z forward along the optical axis (so image v grows with y).
Object yaw rotates about the vertical (y) axis and yaw = 0 means the object
faces +z. Box dimensions are width (object x), height (object y) and length
(object z). Angles are normalized to (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Box2D",
    "Box3D",
    "CameraIntrinsics",
    "GeometryError",
    "ObjectState",
    "StereoRig",
    "alpha_from_theta",
    "back_project",
    "bev_corners",
    "box_to_box2d",
    "centroid_distance",
    "coarse_depth",
    "iou2d",
    "iou3d",
    "project",
    "rotation_about_y",
    "rotation_about_y_derivative",
    "theta_from_alpha",
    "wrap_angle",
]


class GeometryError(ValueError):
    """Raised for geometric domain errors such as non-positive depth."""


def wrap_angle(angle: float) -> float:
    """Normalize an angle to the interval (-pi, pi]."""
    a = math.remainder(float(angle), math.tau)
    if a <= -math.pi:
        a += math.tau
    return a


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics of a rectified camera plus its pixel grid size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")
        if self.width < 2 or self.height < 2:
            raise GeometryError("image must be at least 2x2 pixels")


@dataclass(frozen=True)
class StereoRig:
    """Rectified stereo pair: shared intrinsics and a horizontal baseline.

    The right camera center sits at (+baseline, 0, 0) in left-camera
    coordinates, so a left-frame point p has right-frame coordinates
    p + (-baseline, 0, 0) and disparity u_left - u_right = fx * baseline / z.
    A zero baseline is tolerated as a degenerate diagnostic rig; the
    simulator rejects it.
    """

    intrinsics: CameraIntrinsics
    baseline: float

    def __post_init__(self):
        if self.baseline < 0:
            raise GeometryError("baseline must be non-negative")

    @property
    def stereo_translation(self) -> np.ndarray:
        """Translation that maps left-camera points into the right frame."""
        return np.array([-self.baseline, 0.0, 0.0])


@dataclass(frozen=True)
class ObjectState:
    """Centroid position (camera frame, meters) and yaw of one object."""

    position: np.ndarray
    yaw: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3).copy()
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_vector(self) -> np.ndarray:
        return np.array([*self.position, self.yaw])

    @staticmethod
    def from_vector(x) -> "ObjectState":
        x = np.asarray(x, dtype=np.float64).reshape(4)
        return ObjectState(position=x[:3], yaw=float(x[3]))


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: centroid state plus width/height/length extents."""

    state: ObjectState
    width: float
    height: float
    length: float

    def __post_init__(self):
        if min(self.width, self.height, self.length) <= 0:
            raise GeometryError("box dimensions must be positive")

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.width, self.height, self.length])

    def corners(self) -> np.ndarray:
        """All 8 corners, (8, 3), in camera coordinates."""
        sx = np.array([1, -1, -1, 1, 1, -1, -1, 1], dtype=np.float64)
        sy = np.array([1, 1, 1, 1, -1, -1, -1, -1], dtype=np.float64)
        sz = np.array([1, 1, -1, -1, 1, 1, -1, -1], dtype=np.float64)
        local = np.stack(
            [0.5 * self.width * sx, 0.5 * self.height * sy, 0.5 * self.length * sz],
            axis=1,
        )
        rot = rotation_about_y(self.state.yaw)
        return local @ rot.T + self.state.position

    def volume(self) -> float:
        return self.width * self.height * self.length


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned image box in pixel coordinates, min corner inclusive."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise GeometryError("2D box must have positive extent")

    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


def rotation_about_y(yaw: float) -> np.ndarray:
    """Rotation of `yaw` radians about the vertical (y) axis."""
    c = math.cos(yaw)
    s = math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_about_y_derivative(yaw: float) -> np.ndarray:
    """d/dyaw of rotation_about_y."""
    c = math.cos(yaw)
    s = math.sin(yaw)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def project(points, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points to pixel coordinates.

    Accepts a single (3,) point or an (n, 3) array; returns the matching
    (2,) or (n, 2) pixel array. Raises GeometryError when any depth is
    non-positive.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    if np.any(z <= 0):
        raise GeometryError("projection requires positive depth")
    u = intrinsics.fx * pts[:, 0] / z + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / z + intrinsics.cy
    out = np.stack([u, v], axis=1)
    return out[0] if single else out


def back_project(pixels, depth, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Lift pixels to camera-frame points at the given depth(s).

    Inverse of project: back_project(project(p), p_z) == p.
    """
    px = np.asarray(pixels, dtype=np.float64)
    single = px.ndim == 1
    px = np.atleast_2d(px)
    d = np.asarray(depth, dtype=np.float64).reshape(-1)
    if d.size == 1 and px.shape[0] > 1:
        d = np.full(px.shape[0], d[0])
    if np.any(d <= 0):
        raise GeometryError("back-projection requires positive depth")
    x = (px[:, 0] - intrinsics.cx) * d / intrinsics.fx
    y = (px[:, 1] - intrinsics.cy) * d / intrinsics.fy
    out = np.stack([x, y, d], axis=1)
    return out[0] if single else out


def alpha_from_theta(yaw: float, position) -> float:
    """Observation angle corresponding to a global yaw at a given position.

    alpha = yaw + atan2(x, z); atan2 keeps the relation valid in every
    quadrant with positive depth.
    """
    pos = np.asarray(position, dtype=np.float64).reshape(3)
    if pos[2] <= 0:
        raise GeometryError("observation angle requires positive depth")
    return wrap_angle(yaw + math.atan2(pos[0], pos[2]))


def theta_from_alpha(alpha: float, position) -> float:
    """Global yaw recovered from an observation angle at a given position."""
    pos = np.asarray(position, dtype=np.float64).reshape(3)
    if pos[2] <= 0:
        raise GeometryError("observation angle requires positive depth")
    return wrap_angle(alpha - math.atan2(pos[0], pos[2]))


def coarse_depth(intrinsics: CameraIntrinsics, height_3d: float, height_2d: float) -> float:
    """Depth estimate from metric object height and its projected pixel height.

    Uses the vertical focal length because image height is a vertical extent.
    """
    if height_3d <= 0 or height_2d <= 0:
        raise GeometryError("heights must be positive")
    return intrinsics.fy * height_3d / height_2d


def iou2d(a: Box2D, b: Box2D) -> float:
    """Intersection over union of two axis-aligned image boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area() + b.area() - inter
    return float(inter / union)


def bev_corners(box: Box3D) -> np.ndarray:
    """Footprint corners of a box in the ground plane, (4, 2) as (x, z), CCW."""
    c = math.cos(box.state.yaw)
    s = math.sin(box.state.yaw)
    hw = 0.5 * box.width
    hl = 0.5 * box.length
    local = np.array([[hw, hl], [-hw, hl], [-hw, -hl], [hw, -hl]])
    rot = np.array([[c, s], [-s, c]])
    return local @ rot.T + np.array([box.state.position[0], box.state.position[2]])


def _polygon_area(poly: np.ndarray) -> float:
    if poly.shape[0] < 3:
        return 0.0
    x = poly[:, 0]
    z = poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(z, -1)) - np.dot(z, np.roll(x, -1))))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon by a convex CCW polygon."""
    output = subject
    m = clip.shape[0]
    for i in range(m):
        if output.shape[0] == 0:
            break
        a = clip[i]
        b = clip[(i + 1) % m]
        edge = b - a
        d = output - a
        # CCW clip polygon: inside is the left side of each directed edge.
        side = edge[0] * d[:, 1] - edge[1] * d[:, 0]
        new_pts = []
        n = output.shape[0]
        for j in range(n):
            cur = output[j]
            nxt = output[(j + 1) % n]
            s_cur = side[j]
            s_nxt = side[(j + 1) % n]
            if s_cur >= 0:
                new_pts.append(cur)
            if (s_cur > 0 and s_nxt < 0) or (s_cur < 0 and s_nxt > 0):
                t = s_cur / (s_cur - s_nxt)
                new_pts.append(cur + t * (nxt - cur))
        output = np.array(new_pts) if new_pts else np.zeros((0, 2))
    return output


def iou3d(a: Box3D, b: Box3D) -> float:
    """Volume IoU of two yaw-oriented boxes.

    The footprint intersection is an exact convex polygon clip in the ground
    plane; the vertical extent overlaps as an interval, which is exact for
    yaw-only orientations.
    """
    ya0 = a.state.position[1] - 0.5 * a.height
    ya1 = a.state.position[1] + 0.5 * a.height
    yb0 = b.state.position[1] - 0.5 * b.height
    yb1 = b.state.position[1] + 0.5 * b.height
    dy = min(ya1, yb1) - max(ya0, yb0)
    if dy <= 0:
        return 0.0
    inter_poly = _clip_polygon(bev_corners(a), bev_corners(b))
    area = _polygon_area(inter_poly)
    if area <= 0:
        return 0.0
    inter = area * dy
    union = a.volume() + b.volume() - inter
    return float(min(max(inter / union, 0.0), 1.0))


def centroid_distance(a: Box3D, b: Box3D) -> float:
    """Euclidean distance between box centroids in meters."""
    return float(np.linalg.norm(a.state.position - b.state.position))


def box_to_box2d(box: Box3D, intrinsics: CameraIntrinsics, clip: bool = True) -> Box2D | None:
    """Axis-aligned image box around the projected 3D corners.

    Returns None when any corner is at or behind the camera or when the
    clipped box is empty.
    """
    corners = box.corners()
    if np.any(corners[:, 2] <= 0):
        return None
    px = project(corners, intrinsics)
    x0, y0 = px.min(axis=0)
    x1, y1 = px.max(axis=0)
    if clip:
        x0 = max(x0, 0.0)
        y0 = max(y0, 0.0)
        x1 = min(x1, float(intrinsics.width - 1))
        y1 = min(y1, float(intrinsics.height - 1))
    if x1 <= x0 or y1 <= y0:
        return None
    return Box2D(x0, y0, x1, y1)
