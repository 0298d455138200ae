"""Multi-object tracking on dense cue streams.

Identity management is deliberately plain: detections carry a 2D box for the
current frame and, when the object was seen before, the box it had one frame
earlier. A live track remembers the last current-box it consumed, so matching
track boxes against detection previous-boxes reduces association to 2D IoU.
The refinement work happens after association, per matched track, in one of
four modes:

* none      report the regressed initial box as-is.
* spatial   single-frame refinement (stereo photometric plus pose anchors).
* repro     sliding two-frame window with pixel reprojection as the temporal
            term, previous frame marginalized into a prior.
* coord     same window, temporal term reads the dense coordinate map
            instead of matched pixel positions.

A fresh track stays tentative for one frame; its second association triggers
a joint solve over both frames, after which the window starts sliding. A
failed solve falls back to the regressed box for that frame and leaves the
track's carried state and prior untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from stereotrack.correspond import match_coordinates, select_pixels
from stereotrack.geometry import (
    Box2D,
    Box3D,
    ObjectState,
    StereoRig,
    iou2d,
)
from stereotrack.optim import (
    MarginalPrior,
    OptimizerWeights,
    SolverConfig,
    coordinate_block,
    marginalize,
    photometric_block,
    pose_angle_block,
    pose_projection_block,
    prior_block,
    reprojection_block,
    run_gauss_newton,
)

__all__ = [
    "FrameInput",
    "StereoTracker",
    "Track",
    "TrackOutput",
    "TrackerConfig",
    "TrackerResult",
    "TrackerStats",
    "associate",
    "derive_initial_state",
    "run_tracker",
]

MODES = ("none", "spatial", "repro", "coord")


@dataclass(frozen=True)
class TrackerConfig:
    mode: str = "repro"
    iou_threshold: float = 0.5
    association: str = "greedy"  # or "optimal"
    max_misses: int = 2
    use_photometric: bool = True
    photometric_budget: int = 80
    match_distance: float = 0.15
    min_matches: int = 6  # pixel-support floor for refinement and cross-frame coupling
    prior_discount_on_miss: float = 1.0
    weights: OptimizerWeights = OptimizerWeights()
    solver: SolverConfig = SolverConfig()

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.association not in ("greedy", "optimal"):
            raise ValueError("association must be greedy or optimal")


@dataclass(frozen=True)
class FrameInput:
    """One frame of tracker input: the stereo pair plus per-object cues."""

    frame_index: int
    stereo: object
    cues: tuple

    def __post_init__(self):
        for cue in self.cues:
            if cue.frame_index != self.frame_index:
                raise ValueError(
                    f"cue frame {cue.frame_index} does not match input frame {self.frame_index}"
                )


@dataclass
class Track:
    """One tracked object. history holds (frame_index, Box3D) per emitted frame."""

    track_id: int
    status: str  # "tentative" | "active" | "lost" | "dead"
    state: np.ndarray  # (4,) px, py, pz, yaw
    dims: tuple
    prior: MarginalPrior | None
    last_cue: object
    last_box2d: Box2D
    last_frame: int
    birth_input: FrameInput | None
    misses: int = 0
    hits: int = 1
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class TrackOutput:
    frame_index: int
    track_id: int
    box: Box3D
    converged: bool
    cost: float
    refined: bool


@dataclass
class TrackerStats:
    births: int = 0
    deaths: int = 0
    two_frame_solves: int = 0
    prior_solves: int = 0
    converged_prior_solves: int = 0
    single_frame_solves: int = 0
    fallbacks: int = 0
    dropped_priors: int = 0
    starved_cues: int = 0

    @property
    def prior_convergence_rate(self) -> float:
        if self.prior_solves == 0:
            return 1.0
        return self.converged_prior_solves / self.prior_solves


@dataclass(frozen=True)
class TrackerResult:
    outputs: list  # per frame: list[TrackOutput]
    stats: TrackerStats


def derive_initial_state(cue, intr) -> np.ndarray:
    """Initial (px, py, pz, yaw) from the regressed cues.

    Depth and yaw come from the regressed 3D box; the lateral position
    re-derives from the projected centre at that depth. The observation
    angle feeds only its anchor term, so initialization noise and
    measurement noise stay independent knobs.
    """
    z = float(cue.initial_box.state.position[2])
    c = cue.centroid_projection
    x = (float(c[0]) - intr.cx) / intr.fx * z
    y = (float(c[1]) - intr.cy) / intr.fy * z
    return np.array([x, y, z, float(cue.initial_box.state.yaw)])


def _match_from_matrix(iou: np.ndarray, threshold: float, method: str):
    """Assignment on a track-by-detection IoU matrix.

    Greedy takes pairs in decreasing IoU order (ties toward lower indices);
    optimal maximizes the summed IoU over threshold-eligible pairs.
    """
    n_t, n_d = iou.shape
    if n_t == 0 or n_d == 0:
        return []
    if method == "greedy":
        pairs = [
            (t, d)
            for t in range(n_t)
            for d in range(n_d)
            if iou[t, d] >= threshold
        ]
        pairs.sort(key=lambda td: (-iou[td[0], td[1]], td[0], td[1]))
        used_t = set()
        used_d = set()
        out = []
        for t, d in pairs:
            if t not in used_t and d not in used_d:
                out.append((t, d))
                used_t.add(t)
                used_d.add(d)
        return out
    cost = np.where(iou >= threshold, -iou, 1e6)
    rows, cols = linear_sum_assignment(cost)
    return [(int(t), int(d)) for t, d in zip(rows, cols) if iou[t, d] >= threshold]


def associate(track_boxes, detection_prev_boxes, threshold: float, method: str = "greedy"):
    """Match tracks to detections through 2D IoU of carried vs previous boxes."""
    iou = np.zeros((len(track_boxes), len(detection_prev_boxes)))
    for t, tb in enumerate(track_boxes):
        if tb is None:
            continue
        for d, db in enumerate(detection_prev_boxes):
            if db is None:
                continue
            iou[t, d] = iou2d(tb, db)
    return _match_from_matrix(iou, threshold, method)


def _box_from_state(state: np.ndarray, dims) -> Box3D:
    return Box3D(ObjectState(state[:3].copy(), float(state[3])), *dims)


class StereoTracker:
    """Stateful tracker; feed frames in order through step()."""

    def __init__(self, rig: StereoRig, config: TrackerConfig = TrackerConfig()):
        self.rig = rig
        self.config = config
        self.tracks: list[Track] = []
        self.dead: list[Track] = []
        self.stats = TrackerStats()
        self.solve_log: list[dict] = []
        self._next_id = 0

    def _log_solve(self, frame_index: int, track_id: int, path: str, report) -> None:
        entry = {
            "frame": int(frame_index),
            "track_id": int(track_id),
            "path": path,
            "converged": bool(report.converged),
            "iterations": int(report.iterations),
            "cost": float(report.cost),
            "low_confidence": bool(report.low_confidence),
            "term_costs": {k: float(v) for k, v in sorted(report.term_costs.items())},
            "dropped": {k: int(v) for k, v in sorted(report.residuals_dropped.items())},
        }
        if report.trace:
            entry["trace"] = [dict(t) for t in report.trace]
        self.solve_log.append(entry)

    # -- solving ------------------------------------------------------------

    def _frame_blocks(self, frame: FrameInput, cue, offset: int, dim: int):
        """Measurement terms owned by one frame of the window."""
        cfg = self.config
        blocks = []
        if cfg.use_photometric:
            sel = select_pixels(frame.stereo.left, cue.pixels, cfg.photometric_budget)
            blocks.append(
                photometric_block(
                    frame.stereo.left,
                    frame.stereo.right,
                    self.rig,
                    cue.pixels[sel.indices],
                    cue.local_depth[sel.indices],
                    cfg.weights,
                    offset=offset,
                    dim=dim,
                )
            )
        blocks.append(
            pose_projection_block(
                self.rig, cue.centroid_projection, cfg.weights, offset, dim
            )
        )
        blocks.append(pose_angle_block(cue.observation_angle, cfg.weights, offset, dim))
        return blocks

    def _temporal_blocks(self, prev_cue, cue, dim: int):
        """Cross-frame coupling terms, empty when matching is too thin."""
        cfg = self.config
        matches = match_coordinates(
            cue.local_coords, prev_cue.local_coords, cfg.match_distance
        )
        if matches.size < cfg.min_matches:
            return []
        if cfg.mode == "coord":
            patch = getattr(cue, "coord_patch", None)
            if patch is None:
                return []
            return [
                coordinate_block(
                    self.rig,
                    patch,
                    prev_cue.pixels[matches.idx_previous],
                    prev_cue.local_depth[matches.idx_previous],
                    prev_cue.local_coords[matches.idx_previous],
                    cfg.weights,
                    dim=dim,
                )
            ]
        return [
            reprojection_block(
                self.rig,
                cue.pixels[matches.idx_current],
                cue.local_depth[matches.idx_current],
                prev_cue.pixels[matches.idx_previous],
                cfg.weights,
                dim=dim,
            )
        ]

    def _solve_two_frame(self, track: Track, frame: FrameInput, cue):
        blocks = self._frame_blocks(track.birth_input, track.last_cue, 0, 8)
        blocks += self._frame_blocks(frame, cue, 4, 8)
        blocks += self._temporal_blocks(track.last_cue, cue, 8)
        x0 = np.concatenate(
            [
                derive_initial_state(track.last_cue, self.rig.intrinsics),
                derive_initial_state(cue, self.rig.intrinsics),
            ]
        )
        self.stats.two_frame_solves += 1
        return run_gauss_newton(blocks, x0, self.config.solver)

    def _solve_with_prior(self, track: Track, frame: FrameInput, cue):
        blocks = [prior_block(track.prior, 0, 8)]
        blocks += self._frame_blocks(frame, cue, 4, 8)
        blocks += self._temporal_blocks(track.last_cue, cue, 8)
        # The carried state seeds both halves; objects move little enough per
        # frame that the previous pose is inside the photometric basin.
        x0 = np.concatenate([track.state, track.state])
        self.stats.prior_solves += 1
        report = run_gauss_newton(blocks, x0, self.config.solver)
        if report.converged:
            self.stats.converged_prior_solves += 1
        return report

    def _solve_single_frame(self, frame: FrameInput, cue):
        blocks = self._frame_blocks(frame, cue, 0, 4)
        x0 = derive_initial_state(cue, self.rig.intrinsics)
        self.stats.single_frame_solves += 1
        return run_gauss_newton(blocks, x0, self.config.solver)

    # -- per-track update ---------------------------------------------------

    def _update_matched(self, track: Track, frame: FrameInput, cue) -> TrackOutput:
        cfg = self.config
        intr = self.rig.intrinsics
        dims = cue.initial_box.dims
        derived = derive_initial_state(cue, intr)
        out_state = derived
        converged = True
        cost = 0.0
        refined = False

        if cfg.mode == "spatial":
            # Anchors alone leave depth free, so refinement needs real pixel
            # support; below the floor the regressed state stands.
            if cue.n_pixels >= cfg.min_matches:
                report = self._solve_single_frame(frame, cue)
                self._log_solve(
                    frame.frame_index, track.track_id, "single_frame", report
                )
                if report.converged and not report.low_confidence:
                    out_state = report.x
                    track.state = report.x.copy()
                    refined = True
                else:
                    track.state = derived.copy()
                    self.stats.fallbacks += 1
                converged = report.converged
                cost = report.cost
            else:
                track.state = derived.copy()
                self.stats.starved_cues += 1
        elif cfg.mode in ("repro", "coord"):
            if track.prior is None:
                report = self._solve_two_frame(track, frame, cue)
                self._log_solve(frame.frame_index, track.track_id, "two_frame", report)
                prior = None
                if report.converged and not report.low_confidence:
                    prior = marginalize(
                        report.normal_equation, report.x, anchor_frame=frame.frame_index
                    )
                if prior is not None:
                    track.prior = prior
                    track.state = report.x[4:].copy()
                    track.birth_input = None
                    out_state = report.x[4:]
                    refined = True
                else:
                    # Try again from this frame; the failed window is dropped.
                    if report.converged:
                        self.stats.dropped_priors += 1
                    self.stats.fallbacks += 1
                    track.birth_input = frame
                    track.state = derived.copy()
                converged = report.converged
                cost = report.cost
            else:
                if track.misses > 0 and cfg.prior_discount_on_miss != 1.0:
                    track.prior = track.prior.scale(
                        cfg.prior_discount_on_miss**track.misses
                    )
                report = self._solve_with_prior(track, frame, cue)
                self._log_solve(frame.frame_index, track.track_id, "prior", report)
                if report.converged and not report.low_confidence:
                    prior = marginalize(
                        report.normal_equation, report.x, anchor_frame=frame.frame_index
                    )
                    track.state = report.x[4:].copy()
                    out_state = report.x[4:]
                    refined = True
                    if prior is not None:
                        track.prior = prior
                    else:
                        # Uninformative window: restart accumulation here.
                        self.stats.dropped_priors += 1
                        track.prior = None
                        track.birth_input = frame
                else:
                    # A rejected window leaves the prior alone; the regressed
                    # state re-seeds the carried pose instead of drift.
                    track.state = derived.copy()
                    self.stats.fallbacks += 1
                converged = report.converged
                cost = report.cost
            track.status = "active" if track.prior is not None else "tentative"
        else:  # mode "none"
            track.state = derived.copy()

        if cfg.mode in ("none", "spatial"):
            # Any re-observation confirms the track in the prior-free modes.
            track.status = "active"
        track.last_cue = cue
        track.last_box2d = cue.box2d_current
        track.last_frame = frame.frame_index
        track.misses = 0
        track.hits += 1
        track.dims = dims
        box = _box_from_state(out_state, dims)
        track.history.append((frame.frame_index, box))
        return TrackOutput(
            frame_index=frame.frame_index,
            track_id=track.track_id,
            box=box,
            converged=converged,
            cost=cost,
            refined=refined,
        )

    def _spawn(self, frame: FrameInput, cue) -> TrackOutput:
        intr = self.rig.intrinsics
        derived = derive_initial_state(cue, intr)
        dims = cue.initial_box.dims
        track = Track(
            track_id=self._next_id,
            status="tentative",
            state=derived,
            dims=dims,
            prior=None,
            last_cue=cue,
            last_box2d=cue.box2d_current,
            last_frame=frame.frame_index,
            birth_input=frame,
        )
        self._next_id += 1
        self.tracks.append(track)
        self.stats.births += 1
        box = _box_from_state(derived, dims)
        track.history.append((frame.frame_index, box))
        return TrackOutput(
            frame_index=frame.frame_index,
            track_id=track.track_id,
            box=box,
            converged=True,
            cost=0.0,
            refined=False,
        )

    # -- main entry ----------------------------------------------------------

    def step(self, frame: FrameInput) -> list[TrackOutput]:
        cfg = self.config
        dets = list(frame.cues)
        n_before = len(self.tracks)
        track_boxes = [t.last_box2d for t in self.tracks]
        det_prev = [getattr(d, "box2d_previous", None) for d in dets]
        matches = associate(track_boxes, det_prev, cfg.iou_threshold, cfg.association)
        matched_tracks = {t for t, _ in matches}
        matched_dets = {d for _, d in matches}

        outputs = []
        for t_idx, d_idx in matches:
            outputs.append(self._update_matched(self.tracks[t_idx], frame, dets[d_idx]))
        for d_idx, det in enumerate(dets):
            if d_idx not in matched_dets:
                outputs.append(self._spawn(frame, det))

        # Miss sweep covers pre-existing tracks only; this frame's births
        # cannot be unmatched.
        survivors = []
        for t_idx in range(n_before):
            track = self.tracks[t_idx]
            if t_idx in matched_tracks:
                survivors.append(track)
                continue
            track.misses += 1
            if track.misses >= cfg.max_misses:
                track.status = "dead"
                self.dead.append(track)
                self.stats.deaths += 1
            else:
                track.status = "lost"
                survivors.append(track)
        self.tracks = survivors + self.tracks[n_before:]

        outputs.sort(key=lambda o: o.track_id)
        return outputs


def run_tracker(rig: StereoRig, frames, config: TrackerConfig = TrackerConfig()) -> TrackerResult:
    """Run a fresh tracker over an ordered iterable of FrameInput."""
    tracker = StereoTracker(rig, config)
    outputs = [tracker.step(frame) for frame in frames]
    return TrackerResult(outputs=outputs, stats=tracker.stats)
