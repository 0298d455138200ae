"""Stereo 3D object tracking on synthetic scenes.

The package simulates textured cuboid objects seen by a rectified stereo
rig, refines per-object pose by minimizing photometric, reprojection and
pose-consistency errors over a two-frame sliding window with marginalized
priors, and scores the resulting trajectories with CLEAR-MOT metrics.
"""

from stereotrack.geometry import (
    Box2D,
    Box3D,
    CameraIntrinsics,
    GeometryError,
    ObjectState,
    StereoRig,
)

__version__ = "0.1.0"

__all__ = [
    "Box2D",
    "Box3D",
    "CameraIntrinsics",
    "GeometryError",
    "ObjectState",
    "StereoRig",
    "__version__",
]
