"""End-to-end command-line pipeline: simulate -> track -> eval -> plot."""

import os

import numpy as np
import pytest

from stereotrack import cli, io
from stereotrack.evalmot import SimilaritySpec, evaluate
from stereotrack.tracker import derive_initial_state


def scenario_dict(frames=4):
    return {
        "version": 1,
        "rig": {
            "fx": 360.0, "fy": 360.0, "cx": 160.0, "cy": 64.0,
            "width": 320, "height": 128, "baseline": 0.5,
        },
        "frames": frames,
        "dt": 0.1,
        "objects": [
            {"id": 0, "dims": [1.7, 1.5, 4.2], "start": [0.5, 0.8, 11.0, 0.2], "velocity": [0.5, 0.0, 1.0], "yaw_rate": 0.1},
            {"id": 1, "dims": [1.6, 1.4, 4.0], "start": [-2.5, 0.8, 14.0, -0.3], "velocity": [-0.3, 0.0, -0.8]},
        ],
        "sampling": {"max_pixels": 90},
    }


ZERO_NOISE = {
    "local_depth": 0.0, "local_coords": 0.0, "centroid_projection": 0.0,
    "observation_angle": 0.0, "initial_position": 0.0, "initial_yaw": 0.0,
    "box2d": 0.0, "image_intensity": 0.0, "clip_sigmas": None,
}


def write_config(path, **overrides):
    cfg = {
        "version": 1,
        "seed": 0,
        "temporal": "repro",
        "spatial": True,
        "noise": dict(ZERO_NOISE),
        "scenario": scenario_dict(),
    }
    cfg.update(overrides)
    io.dump_yaml(path, cfg)
    return str(path)


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    """A zero-noise 4-frame scene simulated once for the whole module."""
    root = tmp_path_factory.mktemp("scene")
    config = write_config(root / "config.yaml")
    out = root / "sim"
    assert cli.main(["simulate", "-c", config, "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def tracked(scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("tracked")
    assert cli.main(["track", "--scene", str(scene), "--out", str(out)]) == 0
    return out


# -- simulate -----------------------------------------------------------------

def test_simulate_writes_all_artifacts(scene):
    for name in ("gt.jsonl", "cues.jsonl", "frames.npz", "coordmaps.npz", "effective_config.yaml"):
        assert (scene / name).exists(), name
    # Both objects live all 4 frames.
    assert len(io.load_trajectories(scene / "gt.jsonl")) == 8
    meta, by_frame = io.read_cue_file(scene / "cues.jsonl")
    assert meta["frames"] == 4 and len(by_frame) == 4
    assert all(len(cues) == 2 for cues in by_frame)


def test_simulate_reruns_are_byte_identical(tmp_path):
    config = write_config(tmp_path / "config.yaml")
    d1, d2, d3 = (tmp_path / n for n in ("d1", "d2", "d3"))
    assert cli.main(["simulate", "-c", config, "--out", str(d1)]) == 0
    assert cli.main(["simulate", "-c", config, "--out", str(d2)]) == 0
    # Re-running from the effective config reproduces the outputs too.
    assert cli.main(["simulate", "-c", str(d1 / "effective_config.yaml"), "--out", str(d3)]) == 0
    for name in ("gt.jsonl", "cues.jsonl", "frames.npz", "coordmaps.npz"):
        ref = (d1 / name).read_bytes()
        assert (d2 / name).read_bytes() == ref, f"{name} differs on plain re-run"
        assert (d3 / name).read_bytes() == ref, f"{name} differs on effective-config re-run"
    eff1 = io.load_yaml(d1 / "effective_config.yaml")
    eff3 = io.load_yaml(d3 / "effective_config.yaml")
    eff1.pop("output_dir"), eff3.pop("output_dir")
    assert eff1 == eff3


def test_simulate_seed_changes_sampled_trajectories(tmp_path):
    config = tmp_path / "config.yaml"
    scenario = {
        "version": 1,
        "rig": scenario_dict()["rig"],
        "frames": 2,
        "dt": 0.1,
        "random_objects": {"count": 2, "z": [10.0, 20.0], "speed": [1.0, 4.0]},
    }
    write_config(config, scenario=scenario)
    d0, d1 = tmp_path / "s0", tmp_path / "s1"
    assert cli.main(["simulate", "-c", str(config), "--out", str(d0)]) == 0
    assert cli.main(["simulate", "-c", str(config), "--out", str(d1), "--seed", "1"]) == 0
    assert (d0 / "gt.jsonl").read_bytes() != (d1 / "gt.jsonl").read_bytes()


def test_simulate_png_previews(tmp_path):
    config = write_config(tmp_path / "config.yaml", scenario=scenario_dict(frames=1))
    out = tmp_path / "sim"
    assert cli.main(["simulate", "-c", config, "--out", str(out), "--png"]) == 0
    assert (out / "previews" / "frame_0000_left.png").exists()


def test_config_validation_failures(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    cases = (
        {"version": 1, "scenario": scenario_dict(), "typo_key": 3},
        {"version": 2, "scenario": scenario_dict()},
        {"version": 1, "scenario": scenario_dict(), "noise": {"seed": 4}},
        {"version": 1, "scenario": scenario_dict(), "temporal": "full"},
        {"version": 1, "scenario": scenario_dict(), "tracker": {"budget": 9}},
        {"version": 1},
    )
    for data in cases:
        io.dump_yaml(bad, data)
        assert cli.main(["simulate", "-c", str(bad), "--out", str(tmp_path / "x")]) == cli.EXIT_DATA
        err = capsys.readouterr().err
        assert err.startswith("ERROR data: ") and err.count("\n") == 1, err


# -- track --------------------------------------------------------------------

def test_track_zero_noise_stays_on_ground_truth(scene, tracked):
    gt = io.load_trajectories(scene / "gt.jsonl")
    hyp = io.load_trajectories(tracked / "hyp.jsonl")
    assert len(hyp) == len(gt)
    report = evaluate(gt, hyp, SimilaritySpec("distance", 1.0))
    assert report.mota == 100.0
    assert report.ids == 0
    assert report.motp < 0.1  # meters, mean over matches
    assert all(rec["converged"] for rec in io.read_jsonl(tracked / "hyp.jsonl"))


def test_track_solve_log(tracked):
    log = io.read_jsonl(tracked / "solves.jsonl")
    assert log, "window solves must be logged"
    # 2 tracks x (1 two-frame + 2 prior) solves on a 4-frame scene.
    assert sorted({e["path"] for e in log}) == ["prior", "two_frame"]
    for entry in log:
        assert entry["converged"] is True
        assert "photometric" in entry["term_costs"]
        assert "trace" not in entry


def test_track_mode_none_emits_regressed_boxes_verbatim(scene, tmp_path):
    out = tmp_path / "none"
    assert cli.main([
        "track", "--scene", str(scene), "--out", str(out),
        "--temporal", "none", "--spatial", "off",
    ]) == 0
    meta, by_frame = io.read_cue_file(scene / "cues.jsonl")
    rig = io.rig_from_dict(meta["rig"])
    expected = set()
    for frame, cues in enumerate(by_frame):
        for cue in cues:
            x, y, z, yaw = derive_initial_state(cue, rig.intrinsics)
            expected.add((frame, x, y, z, yaw, *cue.initial_box.dims, True, 0.0))
    got = {
        (r["frame"], r["x"], r["y"], r["z"], r["yaw"], r["w"], r["h"], r["l"], r["converged"], r["cost"])
        for r in io.read_jsonl(out / "hyp.jsonl")
    }
    assert got == expected
    assert io.read_jsonl(out / "solves.jsonl") == []


def test_track_coord_and_repro_both_complete(scene, tmp_path, capsys):
    costs = {}
    for mode in ("coord", "repro"):
        out = tmp_path / mode
        assert cli.main([
            "track", "--scene", str(scene), "--out", str(out), "--temporal", mode,
        ]) == 0
        log = io.read_jsonl(out / "solves.jsonl")
        assert log and all(e["converged"] for e in log)
        costs[mode] = [e["cost"] for e in log]
        eff = io.load_yaml(out / "effective_config.yaml")
        assert eff["temporal"] == mode
    out = capsys.readouterr().out
    assert "mode coord" in out and "mode repro" in out
    coord_terms = {
        k for e in io.read_jsonl(tmp_path / "coord" / "solves.jsonl") for k in e["term_costs"]
    }
    assert "coordinates" in coord_terms


def test_track_trace_flag_logs_iterations(scene, tmp_path):
    out = tmp_path / "traced"
    assert cli.main(["track", "--scene", str(scene), "--out", str(out), "--trace"]) == 0
    log = io.read_jsonl(out / "solves.jsonl")
    assert log
    for entry in log:
        steps = entry["trace"]
        assert len(steps) == entry["iterations"]
        assert {"iteration", "cost", "lambda", "step_norm", "accepted"} <= set(steps[0])


def test_track_strict_exit_on_nonconvergence(scene, tmp_path, capsys):
    config = tmp_path / "starved.yaml"
    io.dump_yaml(
        config,
        {"version": 1, "temporal": "repro",
         "solver": {"max_iterations": 1, "step_tol": 0.0, "cost_tol": 0.0}},
    )
    out = tmp_path / "strict"
    code = cli.main([
        "track", "--scene", str(scene), "-c", str(config), "--out", str(out), "--strict",
    ])
    assert code == cli.EXIT_CONVERGENCE
    err = capsys.readouterr().err
    assert err.startswith("ERROR convergence: ")
    # Without --strict the same run degrades gracefully.
    assert cli.main(["track", "--scene", str(scene), "-c", str(config), "--out", str(out)]) == 0


def test_track_missing_scene_is_data_error(tmp_path, capsys):
    assert cli.main(["track", "--scene", str(tmp_path / "nowhere")]) == cli.EXIT_DATA
    assert capsys.readouterr().err.startswith("ERROR data: ")


def test_temporal_spatial_toggles_map_to_modes():
    base = {"version": 1}
    combos = {
        ("none", False): ("none", True),
        ("none", True): ("spatial", True),
        ("repro", True): ("repro", True),
        ("repro", False): ("repro", False),
        ("coord", True): ("coord", True),
    }
    for (temporal, spatial), (mode, photo) in combos.items():
        cfg = cli.parse_experiment_config({**base, "temporal": temporal, "spatial": spatial})
        tcfg = cli.tracker_config(cfg)
        assert (tcfg.mode, tcfg.use_photometric) == (mode, photo), (temporal, spatial)


# -- eval ---------------------------------------------------------------------

def test_eval_gt_against_itself_is_perfect(scene, tmp_path, capsys):
    out = tmp_path / "report"
    gt = str(scene / "gt.jsonl")
    assert cli.main(["eval", "--gt", gt, "--hyp", gt, "--iou3d", "0.5", "--out", str(out)]) == 0
    csv = (out / "report.csv").read_text().strip().split("\n")
    assert csv[0].startswith("run,kind,threshold,MOTA")
    assert len(csv) == 2
    row = csv[1].split(",")
    assert row[:3] == ["gt", "iou3d", "0.5"]
    assert float(row[3]) == 100.0
    stdout = capsys.readouterr().out
    assert "MOTA" in stdout and (out / "report.txt").exists()


def test_eval_flag_fan_out(scene, tracked, tmp_path):
    out = tmp_path / "report"
    assert cli.main([
        "eval", "--gt", str(scene / "gt.jsonl"),
        "--hyp", str(tracked / "hyp.jsonl"), "--hyp", str(scene / "gt.jsonl"),
        "--name", "window", "--name", "oracle",
        "--distance", "3", "--distance", "2", "--distance", "1",
        "--out", str(out),
    ]) == 0
    rows = [ln.split(",") for ln in (out / "report.csv").read_text().strip().split("\n")[1:]]
    assert [(r[0], r[1], r[2]) for r in rows] == [
        ("window", "distance", "3"), ("window", "distance", "2"), ("window", "distance", "1"),
        ("oracle", "distance", "3"), ("oracle", "distance", "2"), ("oracle", "distance", "1"),
    ]
    # All six MOTA cells are perfect on this zero-noise scene.
    assert all(float(r[3]) == 100.0 for r in rows)


def test_eval_bad_threshold_is_usage_error(scene, tmp_path, capsys):
    gt = str(scene / "gt.jsonl")
    code = cli.main(["eval", "--gt", gt, "--hyp", gt, "--iou3d", "1.5", "--out", str(tmp_path)])
    assert code == cli.EXIT_USAGE
    assert capsys.readouterr().err.startswith("ERROR usage: ")


def test_eval_missing_file_is_data_error(tmp_path, capsys):
    gone = str(tmp_path / "gone.jsonl")
    assert cli.main(["eval", "--gt", gone, "--hyp", gone, "--out", str(tmp_path)]) == cli.EXIT_DATA
    assert capsys.readouterr().err.startswith("ERROR data: ")


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == cli.EXIT_USAGE
    assert capsys.readouterr().err.startswith("ERROR usage: ")
    with pytest.raises(SystemExit) as exc:
        cli.main(["track"])  # --scene is required
    assert exc.value.code == cli.EXIT_USAGE


# -- plot ---------------------------------------------------------------------

def test_plot_gt_only_and_with_hypothesis(scene, tracked, tmp_path):
    out = tmp_path / "plots"
    gt = str(scene / "gt.jsonl")
    assert cli.main(["plot", "--gt", gt, "--out", str(out)]) == 0
    svg = (out / "bev.svg").read_text()
    assert '<g class="gt"' in svg and svg.count("<polyline") == 2
    assert (out / "bev.csv").exists()

    assert cli.main([
        "plot", "--gt", gt, "--hyp", str(tracked / "hyp.jsonl"),
        "--out", str(out), "--stem", "both",
    ]) == 0
    both = (out / "both.svg").read_text()
    assert both.count("<polyline") == 4
    first = (out / "both.svg").read_bytes()
    assert cli.main([
        "plot", "--gt", gt, "--hyp", str(tracked / "hyp.jsonl"),
        "--out", str(out), "--stem", "both",
    ]) == 0
    assert (out / "both.svg").read_bytes() == first
