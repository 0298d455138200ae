"""Multi-object tracking evaluation in 3D.

Scores a hypothesis trajectory set against ground truth with the CLEAR
protocol: per frame, matches carried over from the previous frame are kept
while they still pass the similarity gate, the remaining boxes are assigned
optimally, and the leftover counts become false positives and misses. An
identity switch is charged when a ground-truth track's matched hypothesis id
differs from the one it had at its most recent earlier match.

Two similarity kinds are supported: rotated-box 3D IoU (higher is better,
gated from below) and centroid distance in meters (lower is better, gated
from above). MOTP is reported in the similarity's native unit: mean IoU
percent, or mean meters over matched pairs.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from stereotrack.geometry import Box3D, centroid_distance, iou3d

__all__ = [
    "MotReport",
    "SimilaritySpec",
    "TrackedBox",
    "ablation_table",
    "evaluate",
    "table_csv",
    "table_text",
]

_BIG = 1e9  # assignment sentinel for gated-out pairs


@dataclass(frozen=True)
class SimilaritySpec:
    """Matching rule: 3D IoU with a lower gate, or distance with an upper gate."""

    kind: str  # "iou3d" | "distance"
    threshold: float

    def __post_init__(self):
        if self.kind not in ("iou3d", "distance"):
            raise ValueError("similarity kind must be iou3d or distance")
        if self.kind == "iou3d" and not 0.0 < self.threshold <= 1.0:
            raise ValueError("iou3d threshold must lie in (0, 1]")
        if self.kind == "distance" and self.threshold <= 0.0:
            raise ValueError("distance threshold must be positive")

    def value(self, a: Box3D, b: Box3D) -> float:
        if self.kind == "iou3d":
            return iou3d(a, b)
        return centroid_distance(a, b)

    def passes(self, value: float) -> bool:
        if self.kind == "iou3d":
            return value >= self.threshold
        return value <= self.threshold

    def cost(self, value: float) -> float:
        # Assignment minimizes; flip IoU so better means cheaper.
        return -value if self.kind == "iou3d" else value


@dataclass(frozen=True)
class TrackedBox:
    """One trajectory sample: a 3D box owned by a track at a frame."""

    frame: int
    track_id: int
    box: Box3D


@dataclass(frozen=True)
class MotReport:
    """CLEAR scores; None marks quantities undefined for the given inputs.

    mota is (1 - (fn + fp + ids) / gt_count) * 100 and is undefined on empty
    ground truth. motp averages the similarity over matched pairs in its
    native unit. mt and ml are percentages of ground-truth tracks matched on
    at least 80% / at most 20% of their observed frames.
    """

    mota: float | None
    motp: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    mt: float | None
    ml: float | None
    fp: int
    fn: int
    ids: int
    gt_count: int
    tp: int
    gt_tracks: int


def _by_frame(records) -> dict:
    out = defaultdict(dict)
    for rec in records:
        if rec.track_id in out[rec.frame]:
            raise ValueError(
                f"duplicate track id {rec.track_id} at frame {rec.frame}"
            )
        out[rec.frame][rec.track_id] = rec
    return out


def evaluate(gt, hyp, sim: SimilaritySpec) -> MotReport:
    """Score hypothesis trajectories against ground truth.

    gt and hyp are iterables of TrackedBox. Frames are processed in order;
    a match from the previous frame is kept while both boxes exist and still
    pass the gate, everything else is assigned optimally per frame.
    """
    gt_frames = _by_frame(gt)
    hyp_frames = _by_frame(hyp)
    frames = sorted(set(gt_frames) | set(hyp_frames))

    fp = fn = ids = tp = 0
    tp_values: list[float] = []
    last_hyp_of_gt: dict[int, int] = {}  # most recent matched hyp id, ever
    prev_pairs: dict[int, int] = {}  # matches of the previous frame
    lifespan: dict[int, int] = defaultdict(int)
    matched_frames: dict[int, int] = defaultdict(int)
    gt_total = 0

    for f in frames:
        g = gt_frames.get(f, {})
        h = hyp_frames.get(f, {})
        gt_total += len(g)
        for gid in g:
            lifespan[gid] += 1

        pairs: dict[int, int] = {}
        used_h = set()
        # Anti-flicker carry-over: yesterday's pair survives if still valid.
        for gid, hid in prev_pairs.items():
            if gid in g and hid in h and hid not in used_h:
                value = sim.value(g[gid].box, h[hid].box)
                if sim.passes(value):
                    pairs[gid] = hid
                    used_h.add(hid)
                    tp_values.append(value)

        rest_g = [gid for gid in g if gid not in pairs]
        rest_h = [hid for hid in h if hid not in used_h]
        if rest_g and rest_h:
            cost = np.full((len(rest_g), len(rest_h)), _BIG)
            value_mat = np.zeros_like(cost)
            for i, gid in enumerate(rest_g):
                for j, hid in enumerate(rest_h):
                    v = sim.value(g[gid].box, h[hid].box)
                    value_mat[i, j] = v
                    if sim.passes(v):
                        cost[i, j] = sim.cost(v)
            rows, cols = linear_sum_assignment(cost)
            for i, j in zip(rows, cols):
                if cost[i, j] >= _BIG:
                    continue
                gid, hid = rest_g[i], rest_h[j]
                pairs[gid] = hid
                used_h.add(hid)
                tp_values.append(value_mat[i, j])

        for gid, hid in pairs.items():
            if gid in last_hyp_of_gt and last_hyp_of_gt[gid] != hid:
                ids += 1
            last_hyp_of_gt[gid] = hid
            matched_frames[gid] += 1
        tp += len(pairs)
        fn += len(g) - len(pairs)
        fp += len(h) - len(used_h)
        prev_pairs = pairs

    mota = None
    if gt_total > 0:
        mota = (1.0 - (fn + fp + ids) / gt_total) * 100.0
    motp = None
    if tp_values:
        motp = float(np.mean(tp_values))
        if sim.kind == "iou3d":
            motp *= 100.0
    precision = 100.0 * tp / (tp + fp) if tp + fp > 0 else None
    recall = 100.0 * tp / gt_total if gt_total > 0 else None
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)

    n_tracks = len(lifespan)
    mt = ml = None
    if n_tracks > 0:
        ratios = [matched_frames[gid] / lifespan[gid] for gid in lifespan]
        mt = 100.0 * sum(r >= 0.8 for r in ratios) / n_tracks
        ml = 100.0 * sum(r <= 0.2 for r in ratios) / n_tracks

    return MotReport(
        mota=mota,
        motp=motp,
        precision=precision,
        recall=recall,
        f1=f1,
        mt=mt,
        ml=ml,
        fp=fp,
        fn=fn,
        ids=ids,
        gt_count=gt_total,
        tp=tp,
        gt_tracks=n_tracks,
    )


def ablation_table(runs: dict, gt, sims) -> list:
    """Evaluate named runs against one ground truth for every similarity.

    Returns rows (run name, SimilaritySpec, MotReport) in the deterministic
    order runs x sims, following the input orders.
    """
    rows = []
    for name, records in runs.items():
        for sim in sims:
            rows.append((name, sim, evaluate(gt, records, sim)))
    return rows


_COLUMNS = (
    "run",
    "kind",
    "threshold",
    "MOTA",
    "MOTP",
    "precision",
    "recall",
    "F1",
    "MT",
    "ML",
    "FP",
    "FN",
    "IDS",
    "GT",
)


def _row_cells(name: str, sim: SimilaritySpec, report: MotReport) -> list:
    def num(v):
        return "n/a" if v is None else f"{v:.4f}"

    return [
        name,
        sim.kind,
        f"{sim.threshold:g}",
        num(report.mota),
        num(report.motp),
        num(report.precision),
        num(report.recall),
        num(report.f1),
        num(report.mt),
        num(report.ml),
        str(report.fp),
        str(report.fn),
        str(report.ids),
        str(report.gt_count),
    ]


def table_csv(rows) -> str:
    lines = [",".join(_COLUMNS)]
    for name, sim, report in rows:
        lines.append(",".join(_row_cells(name, sim, report)))
    return "\n".join(lines) + "\n"


def table_text(rows) -> str:
    """Aligned plain-text rendering of ablation_table rows."""
    table = [list(_COLUMNS)] + [_row_cells(n, s, r) for n, s, r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(_COLUMNS))]
    lines = []
    for k, row in enumerate(table):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(row, widths)))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
