"""Serialization round trips: JSON-lines trajectories, cue files, bundles."""

import numpy as np
import pytest
from PIL import Image

from stereotrack import io
from stereotrack.geometry import Box3D, ObjectState
from stereotrack.scenesim import NoiseConfig, generate_scenario, render_frame_products


def random_box(rng) -> Box3D:
    return Box3D(
        ObjectState(position=rng.uniform(-8, 8, 3) + np.array([0, 0, 20.0]), yaw=rng.uniform(-3, 3)),
        width=rng.uniform(1.4, 2.0),
        height=rng.uniform(1.2, 1.8),
        length=rng.uniform(3.5, 5.0),
    )


def small_scenario(frames: int = 3, seed: int = 11):
    spec = {
        "version": 1,
        "rig": {"fx": 360.0, "fy": 360.0, "cx": 160.0, "cy": 64.0, "width": 320, "height": 128, "baseline": 0.5},
        "frames": frames,
        "dt": 0.1,
        "objects": [
            {"id": 0, "dims": [1.7, 1.5, 4.2], "start": [0.5, 0.8, 11.0, 0.2], "velocity": [0.5, 0.0, 1.0]},
            {"id": 1, "dims": [1.6, 1.4, 4.0], "start": [-2.5, 0.8, 14.0, -0.3], "appear": 1},
        ],
        "sampling": {"max_pixels": 90},
    }
    return generate_scenario(spec, seed)


# -- trajectory records -----------------------------------------------------

def test_trajectory_record_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    records = [
        io.trajectory_record(f, t, random_box(rng), converged=bool(t % 2), cost=rng.uniform())
        for f in range(4)
        for t in range(3)
    ]
    path = tmp_path / "traj.jsonl"
    io.write_jsonl(path, records)
    loaded = io.load_trajectories(path)
    assert len(loaded) == len(records)
    for rec, tb in zip(records, loaded):
        assert (tb.frame, tb.track_id) == (rec["frame"], rec["track_id"])
        assert tb.box.state.position.tolist() == [rec["x"], rec["y"], rec["z"]]
        assert tb.box.state.yaw == rec["yaw"]
        assert (tb.box.width, tb.box.height, tb.box.length) == (rec["w"], rec["h"], rec["l"])


def test_trajectory_record_schema_is_strict():
    rng = np.random.default_rng(1)
    good = io.trajectory_record(0, 0, random_box(rng), True, 0.0)
    with pytest.raises(io.DataError, match="unknown keys"):
        io.tracked_box_from_record({**good, "score": 1.0})
    bad = dict(good)
    del bad["yaw"]
    with pytest.raises(io.DataError, match="missing key 'yaw'"):
        io.tracked_box_from_record(bad)
    with pytest.raises(io.DataError, match="dimensions"):
        io.tracked_box_from_record({**good, "w": -1.0})


def test_read_jsonl_reports_offending_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"frame": 0}\nnot json\n')
    with pytest.raises(io.DataError, match=r"bad\.jsonl:2"):
        io.read_jsonl(path)
    path.write_text('[1, 2]\n')
    with pytest.raises(io.DataError, match="object per line"):
        io.read_jsonl(path)


def test_ground_truth_records_cover_lifespans():
    scenario = small_scenario(frames=3)
    records = io.ground_truth_records(scenario)
    # Object 0 lives all 3 frames, object 1 appears at frame 1.
    assert len(records) == 3 + 2
    assert [(r["frame"], r["track_id"]) for r in records] == [
        (0, 0), (1, 0), (1, 1), (2, 0), (2, 1),
    ]
    state = scenario.objects[0].states[2]
    rec = next(r for r in records if r["frame"] == 2 and r["track_id"] == 0)
    assert rec["x"] == state.position[0] and rec["z"] == state.position[2]


# -- cue files ----------------------------------------------------------------

def test_cue_record_round_trip_exact(tmp_path):
    scenario = small_scenario()
    products = render_frame_products(scenario, 1, NoiseConfig(seed=7))
    assert products.cues, "scenario renders no cues"
    cue = products.cues[0]
    path = tmp_path / "cues.jsonl"
    io.write_jsonl(path, [io.cue_record(cue)])
    back = io.cue_from_record(io.read_jsonl(path)[0], coord_patch=cue.coord_patch)
    assert back.frame_index == cue.frame_index and back.gt_track == cue.gt_track
    assert np.array_equal(back.pixels, cue.pixels)
    assert np.array_equal(back.local_depth, cue.local_depth)
    assert np.array_equal(back.local_coords, cue.local_coords)
    assert np.array_equal(back.centroid_projection, cue.centroid_projection)
    assert back.observation_angle == cue.observation_angle
    assert back.box2d_current == cue.box2d_current
    assert back.box2d_previous == cue.box2d_previous
    assert np.array_equal(back.initial_box.state.position, cue.initial_box.state.position)
    assert back.initial_box.state.yaw == cue.initial_box.state.yaw
    assert back.initial_box.dims.tolist() == cue.initial_box.dims.tolist()


def test_cue_file_groups_by_frame(tmp_path):
    scenario = small_scenario()
    noise = NoiseConfig(seed=3)
    products = [render_frame_products(scenario, k, noise) for k in range(scenario.frames)]
    meta = {"version": 1, "frames": scenario.frames, "rig": io.rig_to_dict(scenario.rig)}
    path = tmp_path / "cues.jsonl"
    io.write_cue_file(path, meta, [p.cues for p in products])
    meta_back, by_frame = io.read_cue_file(path)
    assert meta_back == meta
    assert len(by_frame) == scenario.frames
    assert [len(cs) for cs in by_frame] == [len(p.cues) for p in products]
    # Patches only attach when the sidecar mapping is supplied.
    assert all(c.coord_patch is None for cs in by_frame for c in cs)
    maps = {k: p.coord_maps for k, p in enumerate(products)}
    _, with_maps = io.read_cue_file(path, maps)
    attached = [c for cs in with_maps for c in cs if c.coord_patch is not None]
    assert attached


def test_cue_file_requires_meta_line(tmp_path):
    path = tmp_path / "cues.jsonl"
    io.write_jsonl(path, [{"frame": 0}])
    with pytest.raises(io.DataError, match="meta"):
        io.read_cue_file(path)


def test_cue_record_schema_is_strict(tmp_path):
    scenario = small_scenario()
    cue = render_frame_products(scenario, 1, NoiseConfig(seed=7)).cues[0]
    rec = io.cue_record(cue)
    with pytest.raises(io.DataError, match="unknown keys"):
        io.cue_from_record({**rec, "confidence": 0.9})
    bad = dict(rec)
    bad["pixels"] = []
    with pytest.raises(io.DataError):
        io.cue_from_record(bad)
    bad = dict(rec)
    del bad["observation_angle"]
    with pytest.raises(io.DataError, match="observation_angle"):
        io.cue_from_record(bad)


def test_rig_dict_round_trip():
    scenario = small_scenario()
    d = io.rig_to_dict(scenario.rig)
    rig = io.rig_from_dict(d)
    assert rig == scenario.rig
    with pytest.raises(io.DataError, match="unknown keys"):
        io.rig_from_dict({**d, "skew": 0.0})
    with pytest.raises(io.DataError, match="baseline"):
        io.rig_from_dict({k: v for k, v in d.items() if k != "baseline"})


# -- array bundles ------------------------------------------------------------

def test_array_bundle_round_trip_and_determinism(tmp_path):
    rng = np.random.default_rng(5)
    arrays = {
        "a": rng.normal(size=(7, 3)),
        "b": rng.integers(0, 9, size=(4,)),
        "mask": rng.normal(size=(5, 5)) > 0,
    }
    p1, p2 = tmp_path / "one.npz", tmp_path / "two.npz"
    io.save_arrays(p1, arrays)
    io.save_arrays(p2, dict(reversed(list(arrays.items()))))
    assert p1.read_bytes() == p2.read_bytes(), "insertion order must not leak"
    back = io.load_arrays(p1)
    assert set(back) == set(arrays)
    for name in arrays:
        assert back[name].dtype == np.asarray(arrays[name]).dtype
        assert np.array_equal(back[name], arrays[name])


def test_load_arrays_rejects_garbage(tmp_path):
    path = tmp_path / "junk.npz"
    path.write_bytes(b"this is not a zip")
    with pytest.raises(io.DataError, match="unreadable"):
        io.load_arrays(path)


def test_stereo_frames_round_trip(tmp_path):
    scenario = small_scenario()
    noise = NoiseConfig(seed=2)
    frames = [render_frame_products(scenario, k, noise).stereo for k in range(2)]
    path = tmp_path / "frames.npz"
    io.save_stereo_frames(path, frames)
    back = io.load_stereo_frames(path)
    assert sorted(back) == [0, 1]
    for sf in frames:
        assert np.array_equal(back[sf.frame_index].left, sf.left)
        assert np.array_equal(back[sf.frame_index].right, sf.right)


def test_coord_maps_round_trip(tmp_path):
    scenario = small_scenario()
    products = render_frame_products(scenario, 1, NoiseConfig.zero())
    assert products.coord_maps
    path = tmp_path / "maps.npz"
    io.save_coord_maps(path, {1: products.coord_maps})
    back = io.load_coord_maps(path)
    assert set(back) == {1} and set(back[1]) == set(products.coord_maps)
    track, patch = next(iter(products.coord_maps.items()))
    loaded = back[1][track]
    assert (loaded.origin_u, loaded.origin_v) == (patch.origin_u, patch.origin_v)
    assert loaded.max_hole_px == patch.max_hole_px
    assert np.array_equal(loaded.values, patch.values)
    assert np.array_equal(loaded.valid, patch.valid)
    # The hole-fill index is rebuilt on load; sampling must agree exactly.
    u = patch.origin_u + np.array([1.0, 3.5, 7.2])
    v = patch.origin_v + np.array([1.0, 2.5, 4.8])
    for got, want in zip(loaded.sample_with_grad(u, v), patch.sample_with_grad(u, v)):
        assert np.array_equal(got, want)


def test_png_preview(tmp_path):
    grid = np.linspace(0, 1, 64 * 32).reshape(32, 64)
    path = tmp_path / "preview.png"
    io.write_png_preview(path, grid)
    with Image.open(path) as img:
        assert img.mode == "L"
        assert img.size == (64, 32)
        arr = np.asarray(img)
    assert arr[0, 0] == 0 and arr[-1, -1] == 255


# -- YAML ---------------------------------------------------------------------

def test_yaml_round_trip_and_determinism(tmp_path):
    data = {
        "version": 1,
        "noise": {"clip_sigmas": None, "box2d": 1.5},
        "flags": {"spatial": True, "strict": False},
        "name": "run a",
    }
    p1, p2 = tmp_path / "a.yaml", tmp_path / "b.yaml"
    io.dump_yaml(p1, data)
    io.dump_yaml(p2, dict(reversed(list(data.items()))))
    assert p1.read_bytes() == p2.read_bytes()
    assert io.load_yaml(p1) == data


def test_load_yaml_rejects_non_mapping(tmp_path):
    path = tmp_path / "list.yaml"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(io.DataError, match="mapping"):
        io.load_yaml(path)
    path.write_text("a: [1, 2\n")
    with pytest.raises(io.DataError, match="invalid YAML"):
        io.load_yaml(path)
