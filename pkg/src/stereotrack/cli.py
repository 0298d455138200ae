"""Command-line pipeline: simulate scenes, track, evaluate, plot.

Four subcommands share one experiment config format (YAML, versioned,
unknown keys rejected). The effective config, with every default filled in,
is written next to each command's outputs; re-running from that file
reproduces the outputs byte for byte. Exit codes: 0 success, 2 usage,
3 unreadable or invalid data, 4 hard convergence failure (--strict only).
All diagnostics are single lines of the form "ERROR <kind>: <message>".
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from . import io, plotting
from .evalmot import SimilaritySpec, ablation_table, table_csv, table_text
from .geometry import GeometryError
from .optim import OptimizerWeights, SolverConfig
from .scenesim import NoiseConfig, ScenarioError, generate_scenario, render_frame_products
from .tracker import FrameInput, StereoTracker, TrackerConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4

_TEMPORAL_MODES = ("repro", "coord", "none")

_TRACKER_KEYS = (
    "iou_threshold",
    "association",
    "max_misses",
    "photometric_budget",
    "match_distance",
    "min_matches",
    "prior_discount_on_miss",
)


class ConvergenceError(RuntimeError):
    """Raised under --strict when any window solve fails to converge."""


class UsageError(ValueError):
    """A flag value is out of range; maps to the usage exit code."""


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description; every field has its final value."""

    scenario: dict | None
    noise: NoiseConfig
    weights: OptimizerWeights
    tracker: dict
    solver: SolverConfig
    temporal: str
    spatial: bool
    seed: int
    output_dir: str


def _reject_unknown(d: dict, allowed, context: str) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise io.DataError(f"{context}: unknown keys {sorted(unknown)}")


def _coerced(cls, overrides: dict, context: str, frozen: dict | None = None):
    """Build a dataclass from defaults plus overrides, type-checked per field."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    allowed = set(fields) - set(frozen or {})
    _reject_unknown(overrides, allowed, context)
    kwargs = dict(frozen or {})
    for key, val in overrides.items():
        default = getattr(cls(), key) if frozen is None or key not in frozen else None
        if isinstance(default, bool):
            if not isinstance(val, bool):
                raise io.DataError(f"{context}: {key} must be a boolean")
            kwargs[key] = val
        elif isinstance(default, int):
            kwargs[key] = int(val)
        elif isinstance(default, float) or default is None:
            kwargs[key] = None if val is None else float(val)
        else:
            kwargs[key] = type(default)(val)
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise io.DataError(f"{context}: {exc}") from exc


def _as_bool(val, context: str) -> bool:
    if isinstance(val, bool):
        return val
    if isinstance(val, str) and val.lower() in ("on", "off"):
        return val.lower() == "on"
    raise io.DataError(f"{context}: expected a boolean or on/off")


def parse_experiment_config(data: dict, base_dir: str = ".", context: str = "config") -> ExperimentConfig:
    _reject_unknown(
        data,
        {
            "version",
            "seed",
            "output_dir",
            "scenario",
            "noise",
            "weights",
            "tracker",
            "solver",
            "temporal",
            "spatial",
        },
        context,
    )
    if int(data.get("version", 0)) != 1:
        raise io.DataError(f"{context}: version must be 1")
    seed = int(data.get("seed", 0))

    scenario = data.get("scenario")
    if isinstance(scenario, str):
        scenario = io.load_yaml(os.path.join(base_dir, scenario))
    elif scenario is not None and not isinstance(scenario, dict):
        raise io.DataError(f"{context}: scenario must be a mapping or a path")

    noise_over = dict(data.get("noise") or {})
    if "seed" in noise_over:
        raise io.DataError(f"{context}: noise.seed is not a setting; the top-level seed drives all noise")
    noise = _coerced(NoiseConfig, noise_over, f"{context}: noise", frozen={"seed": seed})

    weights = _coerced(OptimizerWeights, dict(data.get("weights") or {}), f"{context}: weights")
    solver = _coerced(SolverConfig, dict(data.get("solver") or {}), f"{context}: solver")

    tracker_over = dict(data.get("tracker") or {})
    _reject_unknown(tracker_over, _TRACKER_KEYS, f"{context}: tracker")
    base = TrackerConfig()
    tracker = {k: getattr(base, k) for k in _TRACKER_KEYS}
    for key, val in tracker_over.items():
        cur = tracker[key]
        tracker[key] = type(cur)(val)

    temporal = str(data.get("temporal", "repro"))
    if temporal not in _TEMPORAL_MODES:
        raise io.DataError(f"{context}: temporal must be one of {_TEMPORAL_MODES}")
    spatial = _as_bool(data.get("spatial", True), f"{context}: spatial")

    return ExperimentConfig(
        scenario=scenario,
        noise=noise,
        weights=weights,
        tracker=tracker,
        solver=solver,
        temporal=temporal,
        spatial=spatial,
        seed=seed,
        output_dir=str(data.get("output_dir", "out")),
    )


def load_experiment_config(path: str) -> ExperimentConfig:
    return parse_experiment_config(io.load_yaml(path), os.path.dirname(path) or ".", context=str(path))


def effective_config_dict(cfg: ExperimentConfig) -> dict:
    noise = {
        f.name: getattr(cfg.noise, f.name)
        for f in dataclasses.fields(NoiseConfig)
        if f.name != "seed"
    }
    out = {
        "version": 1,
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
        "noise": noise,
        "weights": dataclasses.asdict(cfg.weights),
        "tracker": dict(cfg.tracker),
        "solver": dataclasses.asdict(cfg.solver),
        "temporal": cfg.temporal,
        "spatial": cfg.spatial,
    }
    if cfg.scenario is not None:
        out["scenario"] = cfg.scenario
    return out


def tracker_config(cfg: ExperimentConfig) -> TrackerConfig:
    """Map the temporal/spatial toggles onto one tracker mode.

    Without a temporal term the window collapses to per-frame solves
    (spatial on) or the raw regressed boxes (spatial off). With one, the
    spatial toggle controls whether the stereo intensity term joins the
    window; the pose anchors always do.
    """
    if cfg.temporal == "none":
        mode = "spatial" if cfg.spatial else "none"
        use_photometric = True
    else:
        mode = cfg.temporal
        use_photometric = cfg.spatial
    return TrackerConfig(
        mode=mode,
        use_photometric=use_photometric,
        weights=cfg.weights,
        solver=cfg.solver,
        **cfg.tracker,
    )


# --------------------------------------------------------------------------
# subcommands

def cmd_simulate(args) -> int:
    cfg = load_experiment_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed, noise=dataclasses.replace(cfg.noise, seed=args.seed))
    if cfg.scenario is None:
        raise io.DataError(f"{args.config}: simulate needs a scenario section")
    out_dir = args.out or cfg.output_dir
    cfg = dataclasses.replace(cfg, output_dir=out_dir)
    scenario = generate_scenario(cfg.scenario, cfg.seed)
    os.makedirs(out_dir, exist_ok=True)

    products = [
        render_frame_products(scenario, k, cfg.noise) for k in range(scenario.frames)
    ]
    gt_records = io.ground_truth_records(scenario)
    io.write_jsonl(os.path.join(out_dir, "gt.jsonl"), gt_records)
    meta = {
        "version": 1,
        "frames": scenario.frames,
        "dt": scenario.dt,
        "seed": cfg.seed,
        "rig": io.rig_to_dict(scenario.rig),
    }
    io.write_cue_file(os.path.join(out_dir, "cues.jsonl"), meta, [p.cues for p in products])
    io.save_stereo_frames(os.path.join(out_dir, "frames.npz"), [p.stereo for p in products])
    io.save_coord_maps(
        os.path.join(out_dir, "coordmaps.npz"),
        {k: p.coord_maps for k, p in enumerate(products)},
    )
    io.dump_yaml(os.path.join(out_dir, "effective_config.yaml"), effective_config_dict(cfg))
    if args.png:
        preview_dir = os.path.join(out_dir, "previews")
        os.makedirs(preview_dir, exist_ok=True)
        for p in products:
            io.write_png_preview(
                os.path.join(preview_dir, f"frame_{p.stereo.frame_index:04d}_left.png"),
                p.stereo.left,
            )
    n_cues = sum(len(p.cues) for p in products)
    print(f"simulated {scenario.frames} frames, {len(scenario.objects)} objects -> {out_dir}")
    print(f"gt records: {len(gt_records)}, cue records: {n_cues}")
    return EXIT_OK


def _load_scene(scene_dir: str, need_stereo: bool, need_coord_maps: bool):
    cue_path = os.path.join(scene_dir, "cues.jsonl")
    if not os.path.exists(cue_path):
        raise io.DataError(f"{cue_path}: no cue file; run simulate first")
    coord_maps = None
    if need_coord_maps:
        map_path = os.path.join(scene_dir, "coordmaps.npz")
        if not os.path.exists(map_path):
            raise io.DataError(f"{map_path}: coordinate mode needs the coordinate-map bundle")
        coord_maps = io.load_coord_maps(map_path)
    meta, cues_by_frame = io.read_cue_file(cue_path, coord_maps)
    rig = io.rig_from_dict(meta.get("rig", {}), context=f"{cue_path}: meta.rig")
    stereo = {}
    if need_stereo:
        frame_path = os.path.join(scene_dir, "frames.npz")
        if not os.path.exists(frame_path):
            raise io.DataError(f"{frame_path}: this tracker mode needs the rendered frames")
        stereo = io.load_stereo_frames(frame_path)
        missing = [k for k in range(len(cues_by_frame)) if k not in stereo]
        if missing:
            raise io.DataError(f"{frame_path}: missing frames {missing[:4]}")
    return meta, cues_by_frame, rig, stereo


def cmd_track(args) -> int:
    config_path = args.config or os.path.join(args.scene, "effective_config.yaml")
    cfg = load_experiment_config(config_path)
    if args.temporal is not None:
        cfg = dataclasses.replace(cfg, temporal=args.temporal)
    if args.spatial is not None:
        cfg = dataclasses.replace(cfg, spatial=args.spatial == "on")
    if args.trace:
        cfg = dataclasses.replace(cfg, solver=dataclasses.replace(cfg.solver, collect_trace=True))
    tcfg = tracker_config(cfg)

    out_dir = args.out or args.scene
    cfg = dataclasses.replace(cfg, output_dir=out_dir)
    meta, cues_by_frame, rig, stereo = _load_scene(
        args.scene,
        need_stereo=tcfg.mode != "none" and tcfg.use_photometric,
        need_coord_maps=tcfg.mode == "coord",
    )
    tracker = StereoTracker(rig, tcfg)
    outputs = [
        tracker.step(FrameInput(frame_index=k, stereo=stereo.get(k), cues=tuple(cues)))
        for k, cues in enumerate(cues_by_frame)
    ]

    os.makedirs(out_dir, exist_ok=True)
    io.write_jsonl(os.path.join(out_dir, "hyp.jsonl"), io.output_records(outputs))
    io.write_jsonl(os.path.join(out_dir, "solves.jsonl"), tracker.solve_log)
    io.dump_yaml(os.path.join(out_dir, "effective_config.yaml"), effective_config_dict(cfg))

    n_solves = len(tracker.solve_log)
    n_conv = sum(1 for e in tracker.solve_log if e["converged"])
    n_out = sum(len(o) for o in outputs)
    print(f"tracked {len(cues_by_frame)} frames, mode {tcfg.mode} -> {out_dir}")
    print(f"outputs: {n_out}, solves: {n_conv}/{n_solves} converged")
    if args.strict and n_conv < n_solves:
        raise ConvergenceError(f"{n_solves - n_conv} of {n_solves} window solves did not converge")
    return EXIT_OK


def _run_names(paths, names):
    if names:
        if len(names) != len(paths):
            raise UsageError(f"--name given {len(names)} times for {len(paths)} hypothesis files")
        return list(names)
    out = []
    seen: dict = {}
    for path in paths:
        stem = os.path.splitext(os.path.basename(path))[0]
        n = seen.get(stem, 0)
        seen[stem] = n + 1
        out.append(stem if n == 0 else f"{stem}#{n}")
    return out


def cmd_eval(args) -> int:
    try:
        sims = [SimilaritySpec("iou3d", t) for t in args.iou3d or []]
        sims += [SimilaritySpec("distance", t) for t in args.distance or []]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not sims:
        sims = [SimilaritySpec("iou3d", 0.5)]
    gt = io.load_trajectories(args.gt)
    names = _run_names(args.hyp, args.name)
    if len(set(names)) != len(names):
        raise UsageError("run names must be unique")
    runs = {name: io.load_trajectories(path) for name, path in zip(names, args.hyp)}
    rows = ablation_table(runs, gt, sims)
    os.makedirs(args.out, exist_ok=True)
    csv_path = os.path.join(args.out, "report.csv")
    txt_path = os.path.join(args.out, "report.txt")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(table_csv(rows))
    text = table_text(rows)
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK


def cmd_plot(args) -> int:
    gt = io.load_trajectories(args.gt)
    hyp = io.load_trajectories(args.hyp) if args.hyp else []
    os.makedirs(args.out, exist_ok=True)
    svg_path = os.path.join(args.out, f"{args.stem}.svg")
    csv_path = os.path.join(args.out, f"{args.stem}.csv")
    with open(svg_path, "w", encoding="utf-8") as fh:
        fh.write(plotting.bev_svg(gt, hyp))
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(plotting.trajectory_csv(gt, hyp))
    print(f"wrote {svg_path} and {csv_path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"ERROR usage: {message}\n")
        sys.exit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stereotrack", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p_sim = sub.add_parser("simulate", help="render a synthetic stereo sequence")
    p_sim.add_argument("-c", "--config", required=True, help="experiment config YAML")
    p_sim.add_argument("--out", help="output directory (default: config output_dir)")
    p_sim.add_argument("--seed", type=int, help="override the config seed")
    p_sim.add_argument("--png", action="store_true", help="also write grayscale previews")
    p_sim.set_defaults(func=cmd_simulate)

    p_trk = sub.add_parser("track", help="run the tracker over a simulated scene")
    p_trk.add_argument("--scene", required=True, help="directory written by simulate")
    p_trk.add_argument(
        "-c", "--config", help="experiment config YAML (default: the scene's effective config)"
    )
    p_trk.add_argument("--out", help="output directory (default: the scene directory)")
    p_trk.add_argument("--temporal", choices=_TEMPORAL_MODES, help="override the temporal term")
    p_trk.add_argument("--spatial", choices=("on", "off"), help="override the intensity term")
    p_trk.add_argument("--trace", action="store_true", help="log per-iteration solver state")
    p_trk.add_argument(
        "--strict", action="store_true", help="exit 4 if any window solve fails to converge"
    )
    p_trk.set_defaults(func=cmd_track)

    p_ev = sub.add_parser("eval", help="score hypothesis trajectories against ground truth")
    p_ev.add_argument("--gt", required=True, help="ground-truth trajectory JSONL")
    p_ev.add_argument("--hyp", action="append", required=True, help="hypothesis JSONL (repeatable)")
    p_ev.add_argument("--name", action="append", help="run name per --hyp (default: file stem)")
    p_ev.add_argument(
        "--iou3d", action="append", type=float, help="add a 3D IoU gate at this threshold"
    )
    p_ev.add_argument(
        "--distance", action="append", type=float, help="add a centroid-distance gate in meters"
    )
    p_ev.add_argument("--out", required=True, help="directory for report.csv / report.txt")
    p_ev.set_defaults(func=cmd_eval)

    p_pl = sub.add_parser("plot", help="draw bird's-eye-view trajectories as SVG")
    p_pl.add_argument("--gt", required=True, help="ground-truth trajectory JSONL")
    p_pl.add_argument("--hyp", help="hypothesis trajectory JSONL")
    p_pl.add_argument("--out", required=True, help="output directory")
    p_pl.add_argument("--stem", default="bev", help="output file stem (default: bev)")
    p_pl.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        sys.stderr.write(f"ERROR convergence: {exc}\n")
        return EXIT_CONVERGENCE
    except UsageError as exc:
        sys.stderr.write(f"ERROR usage: {exc}\n")
        return EXIT_USAGE
    except (io.DataError, ScenarioError, GeometryError, ValueError, OSError) as exc:
        sys.stderr.write(f"ERROR data: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
