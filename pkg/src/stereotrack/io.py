"""File formats shared by the command-line pipeline.

Trajectories and cue records travel as JSON lines, dense arrays (rendered
stereo pairs, coordinate-map patches) as uncompressed npy-in-zip bundles,
and experiment configuration as YAML. Every writer here is deterministic:
equal inputs produce byte-identical files, which is what lets a re-run from
a saved effective config be checked with a plain file compare.
"""

from __future__ import annotations

import io as _io
import json
import zipfile

import numpy as np
import yaml
from PIL import Image

from .geometry import Box2D, Box3D, CameraIntrinsics, ObjectState, StereoRig
from .evalmot import TrackedBox
from .scenesim import CoordinateMapPatch, DenseCueFrame, ScenarioError, StereoFrame


class DataError(ValueError):
    """A file exists but its content violates the expected schema."""


# --------------------------------------------------------------------------
# JSON lines

def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec))
            fh.write("\n")


def read_jsonl(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: expected an object per line")
            records.append(rec)
    return records


def _need(rec: dict, key: str, context: str):
    if key not in rec:
        raise DataError(f"{context}: missing key '{key}'")
    return rec[key]


# --------------------------------------------------------------------------
# trajectory records
#
# One line per (frame, track) pair:
#   {"frame": .., "track_id": .., "x": .., "y": .., "z": ..,
#    "w": .., "h": .., "l": .., "yaw": .., "converged": .., "cost": ..}

TRAJECTORY_KEYS = ("frame", "track_id", "x", "y", "z", "w", "h", "l", "yaw", "converged", "cost")


def trajectory_record(frame: int, track_id: int, box: Box3D, converged: bool, cost: float) -> dict:
    p = box.state.position
    return {
        "frame": int(frame),
        "track_id": int(track_id),
        "x": float(p[0]),
        "y": float(p[1]),
        "z": float(p[2]),
        "w": float(box.width),
        "h": float(box.height),
        "l": float(box.length),
        "yaw": float(box.state.yaw),
        "converged": bool(converged),
        "cost": float(cost),
    }


def tracked_box_from_record(rec: dict, context: str = "trajectory") -> TrackedBox:
    extra = set(rec) - set(TRAJECTORY_KEYS)
    if extra:
        raise DataError(f"{context}: unknown keys {sorted(extra)}")
    vals = {k: _need(rec, k, context) for k in TRAJECTORY_KEYS}
    try:
        box = Box3D(
            ObjectState(
                position=np.array([vals["x"], vals["y"], vals["z"]], dtype=np.float64),
                yaw=float(vals["yaw"]),
            ),
            width=float(vals["w"]),
            height=float(vals["h"]),
            length=float(vals["l"]),
        )
    except ValueError as exc:
        raise DataError(f"{context}: {exc}") from exc
    return TrackedBox(frame=int(vals["frame"]), track_id=int(vals["track_id"]), box=box)


def load_trajectories(path) -> list[TrackedBox]:
    return [
        tracked_box_from_record(rec, context=f"{path}:{i + 1}")
        for i, rec in enumerate(read_jsonl(path))
    ]


def output_records(per_frame_outputs) -> list[dict]:
    """Flatten tracker step outputs into trajectory records."""
    records = []
    for outputs in per_frame_outputs:
        for out in outputs:
            records.append(
                trajectory_record(out.frame_index, out.track_id, out.box, out.converged, out.cost)
            )
    return records


def ground_truth_records(scenario) -> list[dict]:
    """One record per (frame, present object); converged/cost are vacuous."""
    records = []
    for frame in range(scenario.frames):
        for obj in scenario.objects:
            box = obj.box_at(frame)
            if box is not None:
                records.append(trajectory_record(frame, obj.track_id, box, True, 0.0))
    return records


# --------------------------------------------------------------------------
# cue records
#
# First line of a cue file is {"meta": {...}} carrying the rig and frame
# count; the remaining lines are one cue (object observation) each. This is
# also the import schema for externally produced detections: coordinate-map
# patches live in a sidecar bundle keyed by (frame, gt_track) and are
# optional, every other field is required.


def rig_to_dict(rig: StereoRig) -> dict:
    i = rig.intrinsics
    return {
        "fx": float(i.fx),
        "fy": float(i.fy),
        "cx": float(i.cx),
        "cy": float(i.cy),
        "width": int(i.width),
        "height": int(i.height),
        "baseline": float(rig.baseline),
    }


def rig_from_dict(d: dict, context: str = "rig") -> StereoRig:
    extra = set(d) - {"fx", "fy", "cx", "cy", "width", "height", "baseline"}
    if extra:
        raise DataError(f"{context}: unknown keys {sorted(extra)}")
    try:
        intr = CameraIntrinsics(
            fx=float(_need(d, "fx", context)),
            fy=float(_need(d, "fy", context)),
            cx=float(_need(d, "cx", context)),
            cy=float(_need(d, "cy", context)),
            width=int(_need(d, "width", context)),
            height=int(_need(d, "height", context)),
        )
        return StereoRig(intr, float(_need(d, "baseline", context)))
    except ValueError as exc:
        raise DataError(f"{context}: {exc}") from exc


def _box2d_list(box: Box2D | None):
    if box is None:
        return None
    return [float(box.x_min), float(box.y_min), float(box.x_max), float(box.y_max)]


def _box2d_from(val, context: str) -> Box2D | None:
    if val is None:
        return None
    if not isinstance(val, (list, tuple)) or len(val) != 4:
        raise DataError(f"{context}: 2D box must be [x_min, y_min, x_max, y_max]")
    try:
        return Box2D(*(float(v) for v in val))
    except ValueError as exc:
        raise DataError(f"{context}: {exc}") from exc


def cue_record(cue: DenseCueFrame) -> dict:
    b = cue.initial_box
    return {
        "frame": int(cue.frame_index),
        "gt_track": int(cue.gt_track),
        "pixels": cue.pixels.tolist(),
        "local_depth": cue.local_depth.tolist(),
        "local_coords": cue.local_coords.tolist(),
        "centroid_projection": cue.centroid_projection.tolist(),
        "observation_angle": float(cue.observation_angle),
        "box2d_current": _box2d_list(cue.box2d_current),
        "box2d_previous": _box2d_list(cue.box2d_previous),
        "initial_box": {
            "x": float(b.state.position[0]),
            "y": float(b.state.position[1]),
            "z": float(b.state.position[2]),
            "yaw": float(b.state.yaw),
            "w": float(b.width),
            "h": float(b.height),
            "l": float(b.length),
        },
        "has_coord_patch": cue.coord_patch is not None,
    }


_CUE_KEYS = {
    "frame",
    "gt_track",
    "pixels",
    "local_depth",
    "local_coords",
    "centroid_projection",
    "observation_angle",
    "box2d_current",
    "box2d_previous",
    "initial_box",
    "has_coord_patch",
}


def cue_from_record(rec: dict, context: str = "cue", coord_patch: CoordinateMapPatch | None = None) -> DenseCueFrame:
    extra = set(rec) - _CUE_KEYS
    if extra:
        raise DataError(f"{context}: unknown keys {sorted(extra)}")
    ib = _need(rec, "initial_box", context)
    if not isinstance(ib, dict):
        raise DataError(f"{context}: initial_box must be an object")
    try:
        initial = Box3D(
            ObjectState(
                position=np.array([ib["x"], ib["y"], ib["z"]], dtype=np.float64),
                yaw=float(ib["yaw"]),
            ),
            width=float(ib["w"]),
            height=float(ib["h"]),
            length=float(ib["l"]),
        )
        current = _box2d_from(_need(rec, "box2d_current", context), context)
        if current is None:
            raise DataError(f"{context}: box2d_current is required")
        return DenseCueFrame(
            frame_index=int(_need(rec, "frame", context)),
            gt_track=int(_need(rec, "gt_track", context)),
            pixels=np.asarray(_need(rec, "pixels", context), dtype=np.float64),
            local_depth=np.asarray(_need(rec, "local_depth", context), dtype=np.float64),
            local_coords=np.asarray(_need(rec, "local_coords", context), dtype=np.float64),
            centroid_projection=np.asarray(_need(rec, "centroid_projection", context), dtype=np.float64),
            observation_angle=float(_need(rec, "observation_angle", context)),
            box2d_current=current,
            box2d_previous=_box2d_from(rec.get("box2d_previous"), context),
            initial_box=initial,
            coord_patch=coord_patch,
        )
    except KeyError as exc:
        raise DataError(f"{context}: missing key {exc}") from exc
    except (ScenarioError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{context}: {exc}") from exc


def write_cue_file(path, meta: dict, cues_by_frame) -> None:
    records = [{"meta": meta}]
    for cues in cues_by_frame:
        records.extend(cue_record(c) for c in cues)
    write_jsonl(path, records)


def read_cue_file(path, coord_maps: dict | None = None):
    """Returns (meta, cues per frame). Frame count comes from the meta line.

    coord_maps, when given, is {frame: {gt_track: CoordinateMapPatch}} and
    is attached to cues whose record says one was stored.
    """
    records = read_jsonl(path)
    if not records or "meta" not in records[0]:
        raise DataError(f"{path}: first line must be the meta record")
    meta = records[0]["meta"]
    frames = int(_need(meta, "frames", f"{path}: meta"))
    if frames < 1:
        raise DataError(f"{path}: meta frame count must be >= 1")
    by_frame: list[list[DenseCueFrame]] = [[] for _ in range(frames)]
    for i, rec in enumerate(records[1:], start=2):
        context = f"{path}:{i}"
        frame = int(_need(rec, "frame", context))
        if not 0 <= frame < frames:
            raise DataError(f"{context}: frame {frame} outside 0..{frames - 1}")
        patch = None
        if rec.get("has_coord_patch") and coord_maps is not None:
            patch = coord_maps.get(frame, {}).get(int(rec.get("gt_track", -1)))
        by_frame[frame].append(cue_from_record(rec, context, patch))
    return meta, by_frame


# --------------------------------------------------------------------------
# array bundles
#
# np.savez stamps the current time into the zip directory, which breaks
# byte-identical re-runs, so bundles are written through zipfile directly
# with a fixed timestamp and sorted member order. np.load reads them fine.

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_arrays(path, arrays: dict) -> None:
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = _io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]))
            info = zipfile.ZipInfo(name + ".npy", date_time=_ZIP_EPOCH)
            zf.writestr(info, buf.getvalue())


def load_arrays(path) -> dict:
    try:
        with np.load(path) as data:
            return {name: data[name] for name in data.files}
    except (OSError, zipfile.BadZipFile, ValueError) as exc:
        raise DataError(f"{path}: unreadable array bundle: {exc}") from exc


def save_stereo_frames(path, stereo_frames) -> None:
    arrays = {}
    for sf in stereo_frames:
        arrays[f"f{sf.frame_index:04d}_left"] = sf.left
        arrays[f"f{sf.frame_index:04d}_right"] = sf.right
    save_arrays(path, arrays)


def load_stereo_frames(path) -> dict:
    """Returns {frame_index: StereoFrame}."""
    arrays = load_arrays(path)
    frames = {}
    for name in arrays:
        if not name.endswith("_left"):
            continue
        idx = int(name[1:5])
        right = arrays.get(f"f{idx:04d}_right")
        if right is None:
            raise DataError(f"{path}: frame {idx} misses its right image")
        frames[idx] = StereoFrame(frame_index=idx, left=arrays[name], right=right)
    return frames


def save_coord_maps(path, maps_by_frame: dict) -> None:
    """maps_by_frame: {frame: {gt_track: CoordinateMapPatch}}."""
    arrays = {}
    for frame, per_track in maps_by_frame.items():
        for track, patch in per_track.items():
            stem = f"f{frame:04d}_t{track:04d}"
            arrays[stem + "_values"] = patch.values
            arrays[stem + "_valid"] = patch.valid
            arrays[stem + "_meta"] = np.array(
                [patch.origin_u, patch.origin_v, patch.max_hole_px], dtype=np.float64
            )
    save_arrays(path, arrays)


def load_coord_maps(path) -> dict:
    arrays = load_arrays(path)
    maps: dict = {}
    for name in arrays:
        if not name.endswith("_meta"):
            continue
        frame = int(name[1:5])
        track = int(name[7:11])
        stem = name[: -len("_meta")]
        meta = arrays[name]
        try:
            patch = CoordinateMapPatch(
                origin_u=int(meta[0]),
                origin_v=int(meta[1]),
                values=arrays[stem + "_values"],
                valid=arrays[stem + "_valid"].astype(bool),
                max_hole_px=float(meta[2]),
            )
        except KeyError as exc:
            raise DataError(f"{path}: incomplete patch {stem}: missing {exc}") from exc
        maps.setdefault(frame, {})[track] = patch
    return maps


def write_png_preview(path, grid: np.ndarray) -> None:
    """8-bit grayscale preview of an intensity grid in [0, 1]."""
    img = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((img * 255.0 + 0.5).astype(np.uint8)).save(path)


# --------------------------------------------------------------------------
# YAML configuration

def load_yaml(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise DataError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise DataError(f"{path}: top level must be a mapping")
    return data


def dump_yaml(path, data: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=True, default_flow_style=False)
