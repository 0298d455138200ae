"""Bird's-eye-view trajectory rendering to SVG, plus a flat CSV export.

The view is the camera's ground plane: lateral position on the horizontal
axis, depth increasing upward. Ground truth draws as wide dashed lines,
hypotheses as thin solid ones, each track in its own palette color. Output
is plain deterministic text so equal inputs give byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# matplotlib's tab10; distinct at small stroke widths on white.
_PALETTE = (
    "#1f77b4",
    "#ff7f0e",
    "#2ca02c",
    "#d62728",
    "#9467bd",
    "#8c564b",
    "#e377c2",
    "#7f7f7f",
    "#bcbd22",
    "#17becf",
)


@dataclass(frozen=True)
class BevTransform:
    """Affine map from ground-plane (x, z) meters to SVG pixels.

    SVG y grows downward, so depth is flipped: larger z plots higher.
    """

    x_min: float
    z_min: float
    scale: float
    width: float
    height: float
    margin: float

    def to_px(self, x: float, z: float) -> tuple[float, float]:
        return (
            self.margin + (x - self.x_min) * self.scale,
            self.height - self.margin - (z - self.z_min) * self.scale,
        )


def bev_transform(points: np.ndarray, size: float = 640.0, margin: float = 40.0) -> BevTransform:
    """Fit an isotropic transform so all points land inside the canvas."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.shape[0] == 0:
        pts = np.array([[0.0, 0.0], [1.0, 1.0]])
    x_min, z_min = pts.min(axis=0) - 1.0
    x_max, z_max = pts.max(axis=0) + 1.0
    extent = max(x_max - x_min, z_max - z_min, 1e-6)
    scale = (size - 2.0 * margin) / extent
    return BevTransform(
        x_min=float(x_min),
        z_min=float(z_min),
        scale=float(scale),
        width=float((x_max - x_min) * scale + 2.0 * margin),
        height=float((z_max - z_min) * scale + 2.0 * margin),
        margin=float(margin),
    )


def track_paths(records) -> dict:
    """Group trajectory records: track id -> (n, 3) array of (frame, x, z)."""
    grouped: dict = {}
    for rec in records:
        p = rec.box.state.position
        grouped.setdefault(rec.track_id, []).append((rec.frame, float(p[0]), float(p[2])))
    return {
        tid: np.array(sorted(rows), dtype=np.float64) for tid, rows in grouped.items()
    }


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _polyline_points(path: np.ndarray, tf: BevTransform) -> str:
    return " ".join(
        f"{_fmt(px)},{_fmt(py)}" for px, py in (tf.to_px(x, z) for _, x, z in path)
    )


def _draw_group(lines: list, paths: dict, tf: BevTransform, kind: str) -> None:
    dashed = kind == "gt"
    style = (
        'stroke-width="3.5" stroke-opacity="0.45" stroke-dasharray="7 5"'
        if dashed
        else 'stroke-width="1.6"'
    )
    lines.append(f'<g class="{kind}" fill="none">')
    for rank, tid in enumerate(sorted(paths)):
        color = _PALETTE[rank % len(_PALETTE)]
        path = paths[tid]
        pts = _polyline_points(path, tf)
        lines.append(f'<polyline points="{pts}" stroke="{color}" {style}/>')
        x0, y0 = tf.to_px(path[0, 1], path[0, 2])
        x1, y1 = tf.to_px(path[-1, 1], path[-1, 2])
        r = 4.0 if dashed else 2.5
        lines.append(
            f'<circle cx="{_fmt(x0)}" cy="{_fmt(y0)}" r="{_fmt(r)}" '
            f'fill="white" stroke="{color}"/>'
        )
        lines.append(
            f'<circle cx="{_fmt(x1)}" cy="{_fmt(y1)}" r="{_fmt(r)}" fill="{color}"/>'
        )
        label = ("g" if dashed else "h") + str(tid)
        lines.append(
            f'<text x="{_fmt(x1 + 6)}" y="{_fmt(y1 - 4)}" font-size="11" '
            f'font-family="sans-serif" fill="{color}">{label}</text>'
        )
    lines.append("</g>")


def bev_svg(gt, hyp=(), size: float = 640.0, margin: float = 40.0) -> str:
    """Render ground-truth and hypothesis trajectories into one SVG string."""
    gt_paths = track_paths(gt)
    hyp_paths = track_paths(hyp)
    all_xz = [p[:, 1:] for p in gt_paths.values()] + [p[:, 1:] for p in hyp_paths.values()]
    tf = bev_transform(np.concatenate(all_xz) if all_xz else np.empty((0, 2)), size, margin)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(tf.width)}" '
        f'height="{_fmt(tf.height)}" viewBox="0 0 {_fmt(tf.width)} {_fmt(tf.height)}">',
        f'<rect width="{_fmt(tf.width)}" height="{_fmt(tf.height)}" fill="white"/>',
    ]
    if not gt_paths and not hyp_paths:
        lines.append(
            '<text x="20" y="30" font-size="13" font-family="sans-serif" '
            'fill="#555">no trajectories</text>'
        )
    _draw_group(lines, gt_paths, tf, "gt")
    _draw_group(lines, hyp_paths, tf, "hyp")
    # 5 m scale bar, bottom left.
    bar = 5.0 * tf.scale
    y_bar = tf.height - 0.45 * tf.margin
    lines.append(
        f'<line x1="{_fmt(tf.margin)}" y1="{_fmt(y_bar)}" '
        f'x2="{_fmt(tf.margin + bar)}" y2="{_fmt(y_bar)}" stroke="#333" stroke-width="2"/>'
    )
    lines.append(
        f'<text x="{_fmt(tf.margin + bar + 5)}" y="{_fmt(y_bar + 4)}" font-size="11" '
        f'font-family="sans-serif" fill="#333">5 m</text>'
    )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def trajectory_csv(gt, hyp=()) -> str:
    """Flat per-row dump of both trajectory sets, sorted and full-precision."""
    rows = ["source,track_id,frame,x,y,z,yaw"]
    for source, records in (("gt", gt), ("hyp", hyp)):
        ordered = sorted(records, key=lambda r: (r.track_id, r.frame))
        for rec in ordered:
            p = rec.box.state.position
            rows.append(
                f"{source},{rec.track_id},{rec.frame},"
                f"{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},{float(rec.box.state.yaw)!r}"
            )
    return "\n".join(rows) + "\n"
