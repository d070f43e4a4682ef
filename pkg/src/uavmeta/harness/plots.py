"""SVG rendering of metrics CSVs, written by hand so the output is byte-stable.

Three figure kinds, chosen from the rows' ``phase``:

* ``sweep``      scatter of mean AoI (x) against mean transmit power (y), one point per lambda
* ``meta-train`` meta-loss per epoch
* anything else  reward per index, one polyline per ``run_id`` (learning / adaptation curves)

Curves are smoothed with a trailing moving average whose window is written
into the SVG ``<metadata>`` element. The average is taken over the points
available so far, so smoothing never changes the number of points.
"""

from __future__ import annotations

import warnings
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..metrics import moving_average, read_metrics_csv
from .experiments import parse_sweep_run_id

WIDTH, HEIGHT = 640, 420
MARGIN = {"left": 70, "right": 20, "top": 40, "bottom": 50}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
           "#bcbd22", "#17becf")
DEFAULT_WINDOW = 5


def _fmt(x: float) -> str:
    return f"{x:.2f}"


class _Axes:
    def __init__(self, xs, ys):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        self.x0, self.x1 = self._span(xs)
        self.y0, self.y1 = self._span(ys)

    @staticmethod
    def _span(v):
        if v.size == 0:
            return 0.0, 1.0
        lo, hi = float(v.min()), float(v.max())
        if hi == lo:
            pad = abs(lo) * 0.05 or 1.0
            return lo - pad, hi + pad
        pad = (hi - lo) * 0.05
        return lo - pad, hi + pad

    def px(self, x):
        w = WIDTH - MARGIN["left"] - MARGIN["right"]
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * w

    def py(self, y):
        h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        return HEIGHT - MARGIN["bottom"] - (y - self.y0) / (self.y1 - self.y0) * h


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str, metadata: str) -> list:
    left, right = MARGIN["left"], WIDTH - MARGIN["right"]
    top, bottom = MARGIN["top"], HEIGHT - MARGIN["bottom"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f"<metadata>{escape(metadata)}</metadata>",
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line class="axis" x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line class="axis" x1="{left}" y1="{bottom}" x2="{left}" y2="{top}" stroke="black"/>',
        f'<text x="{(left + right) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="16" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(top + bottom) / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for frac in (0.0, 0.5, 1.0):
        xv = ax.x0 + frac * (ax.x1 - ax.x0)
        yv = ax.y0 + frac * (ax.y1 - ax.y0)
        parts.append(f'<text class="tick" x="{_fmt(ax.px(xv))}" y="{bottom + 16}" text-anchor="middle">{xv:.4g}</text>')
        parts.append(f'<text class="tick" x="{left - 6}" y="{_fmt(ax.py(yv) + 4)}" text-anchor="end">{yv:.4g}</text>')
    return parts


def _warning(parts: list, message: str) -> None:
    parts.append(f'<text class="warning" x="{WIDTH / 2:.1f}" y="{HEIGHT / 2:.1f}" text-anchor="middle" '
                 f'fill="#b00">{escape(message)}</text>')


def curve_svg(series: dict, title: str, xlabel: str, ylabel: str, window: int = DEFAULT_WINDOW) -> str:
    """Polylines for ``{label: (xs, ys)}``; ``ys`` are smoothed with ``window``."""
    smoothed = {k: (np.asarray(x, float), moving_average(y, window)) for k, (x, y) in series.items()}
    all_x = np.concatenate([x for x, _ in smoothed.values()]) if smoothed else np.array([])
    all_y = np.concatenate([y for _, y in smoothed.values()]) if smoothed else np.array([])
    ax = _Axes(all_x, all_y)
    parts = _frame(ax, title, xlabel, ylabel, f"kind=curve; moving-average window={window}")
    if all_x.size == 0:
        _warning(parts, "warning: no data rows")
    for i, (label, (xs, ys)) in enumerate(smoothed.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{_fmt(ax.px(x))},{_fmt(ax.py(y))}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}">'
                     f"<title>{escape(label)}</title></polyline>")
        if len(smoothed) <= len(PALETTE):
            ly = MARGIN["top"] + 14 * (i + 1)
            parts.append(f'<text class="legend" x="{WIDTH - MARGIN["right"] - 4}" y="{ly}" text-anchor="end" '
                         f'fill="{color}">{escape(label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def scatter_svg(points, title: str = "Trade-off sweep") -> str:
    """Scatter of ``(lambda, mean_aoi, mean_power_w)`` triples: AoI on x, power on y."""
    pts = list(points)
    ax = _Axes([p[1] for p in pts], [p[2] for p in pts])
    parts = _frame(ax, title, "mean AoI", "mean transmit power (W)",
                   "kind=scatter; moving-average window=none")
    if not pts:
        _warning(parts, "warning: no data rows")
    for lam, aoi, power in pts:
        x, y = _fmt(ax.px(aoi)), _fmt(ax.py(power))
        parts.append(f'<circle cx="{x}" cy="{y}" r="4" fill="{PALETTE[0]}"><title>lambda={lam:g}</title></circle>')
        parts.append(f'<text class="label" x="{x}" y="{float(y) - 7:.2f}" text-anchor="middle" '
                     f'font-size="10">{lam:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _group(records, value) -> dict:
    series = {}
    for r in records:
        xs, ys = series.setdefault(r.run_id, ([], []))
        xs.append(r.index)
        ys.append(value(r))
    return series


def render_csv(path, window: int = DEFAULT_WINDOW) -> str:
    """SVG text for one metrics CSV; raises SchemaError on malformed input."""
    path = Path(path)
    records = read_metrics_csv(path)
    if not records:
        warnings.warn(f"{path}: no data rows, drawing empty axes", stacklevel=2)
        return curve_svg({}, path.stem, "index", "value", window)
    phases = {r.phase for r in records}
    if phases == {"sweep"}:
        return scatter_svg([(parse_sweep_run_id(r.run_id), r.mean_aoi, r.mean_power_w) for r in records],
                           f"{path.stem}: power vs AoI")
    if phases == {"meta-train"}:
        return curve_svg(_group(records, lambda r: r.meta_loss), f"{path.stem}: meta-loss", "epoch",
                         "meta-loss", window)
    return curve_svg(_group(records, lambda r: r.reward), f"{path.stem}: reward", "episode", "reward", window)


def emit_plots(csv_paths, out_dir, window: int = DEFAULT_WINDOW) -> list:
    """Write ``<csv stem>.svg`` into ``out_dir`` for every CSV; returns the SVG paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for p in csv_paths:
        svg = render_csv(p, window)
        target = out_dir / f"{Path(p).stem}.svg"
        target.write_text(svg)
        written.append(target)
    return written
