"""Pixel selection and cross-frame correspondence.

The optimizer does not consume every sampled pixel. For the photometric term
it wants pixels where the image carries information, so candidates are ranked
by local intensity-gradient magnitude and the top of the ranking is taken.
For the temporal terms, pixels of the current frame are paired with pixels of
the previous frame through their object-frame coordinates: the same physical
surface point has the same local coordinates up to annotation noise, so a
nearest-neighbour match with a distance gate recovers point identity without
appearance matching.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stereotrack import kernels

__all__ = ["CorrespondenceSet", "PixelSampleSet", "match_coordinates", "select_pixels"]


@dataclass(frozen=True)
class PixelSampleSet:
    """Budgeted pixel selection; indices refer to the source cue arrays."""

    indices: np.ndarray  # (k,) int, ranking order (best first)
    scores: np.ndarray  # (k,) gradient magnitude at the selected pixels

    @property
    def size(self) -> int:
        return int(self.indices.shape[0])


@dataclass(frozen=True)
class CorrespondenceSet:
    """Matched pixel pairs between two cue frames of one object."""

    idx_current: np.ndarray  # (k,) into the current cue arrays
    idx_previous: np.ndarray  # (k,) into the previous cue arrays
    distance: np.ndarray  # (k,) coordinate-space match distance

    @property
    def size(self) -> int:
        return int(self.idx_current.shape[0])


def gradient_magnitude_at(image: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Bilinear lookup of |grad I| at float pixel positions."""
    gy, gx = np.gradient(image)
    u = np.ascontiguousarray(pixels[:, 0])
    v = np.ascontiguousarray(pixels[:, 1])
    sx = kernels.bilinear_sample(np.ascontiguousarray(gx), u, v)
    sy = kernels.bilinear_sample(np.ascontiguousarray(gy), u, v)
    return np.hypot(sx, sy)


def select_pixels(image: np.ndarray, pixels: np.ndarray, budget: int) -> PixelSampleSet:
    """Pick the highest-gradient pixels, at most budget of them.

    Ties break toward the lower index, so selections are stable and the
    result for a smaller budget is a prefix of the result for a larger one.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    scores = gradient_magnitude_at(image, pixels)
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    take = order[: min(budget, order.shape[0])]
    return PixelSampleSet(indices=take, scores=scores[take])


def match_coordinates(
    coords_current: np.ndarray,
    coords_previous: np.ndarray,
    max_distance: float,
) -> CorrespondenceSet:
    """Pair current pixels with previous pixels by local-coordinate proximity.

    Each current pixel takes its nearest previous pixel; pairs farther apart
    than max_distance are discarded. Matches are not forced to be one-to-one:
    a previous pixel may serve several current ones, which is harmless for a
    least-squares objective and keeps the matcher free of assignment order
    effects.
    """
    if coords_current.size == 0 or coords_previous.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return CorrespondenceSet(empty, empty, np.zeros(0))
    idx, dist = kernels.nn_match(
        np.ascontiguousarray(coords_current, dtype=np.float64),
        np.ascontiguousarray(coords_previous, dtype=np.float64),
    )
    keep = dist <= max_distance
    return CorrespondenceSet(
        idx_current=np.where(keep)[0].astype(np.int64),
        idx_previous=idx[keep].astype(np.int64),
        distance=dist[keep],
    )
