"""Self-contained SVG boxplots of a percentile summary."""
from __future__ import annotations

from dataclasses import dataclass
from html import escape
from pathlib import Path

PANEL_HEIGHT = 320.0
PLOT_TOP = 40.0
PLOT_BOTTOM = 260.0
LEFT_MARGIN = 50.0
BOX_SPACING = 48.0
BOX_WIDTH = 26.0
PANEL_GAP = 20.0


@dataclass(frozen=True)
class Axis:
    """Linear map from metric values to SVG y coordinates (larger values higher up)."""
    lo: float
    hi: float
    top: float = PLOT_TOP
    bottom: float = PLOT_BOTTOM

    def y(self, value: float) -> float:
        return self.bottom - (value - self.lo) / (self.hi - self.lo) * (self.bottom - self.top)


def axis_for(summary, metric: str) -> Axis:
    vals = [v for s in summary if getattr(s, metric) is not None for v in getattr(s, metric)]
    if not vals:
        return Axis(0.0, 1.0)
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-12:
        return Axis(lo - 0.5, hi + 0.5)
    pad = 0.05 * (hi - lo)
    return Axis(lo - pad, hi + pad)


def _f(x: float) -> str:
    return f"{x:.3f}"


def _box(est: str, cx: float, q, axis: Axis) -> list:
    out = [f'<g class="box" data-estimator="{escape(est)}">']
    if q is None:
        out.append(f'<text x="{_f(cx)}" y="{_f(axis.bottom - 4)}" text-anchor="middle" '
                   f'font-size="9">n/a</text>')
    else:
        p10, p25, p50, p75, p90 = (axis.y(v) for v in q)
        half = BOX_WIDTH / 2
        out += [
            f'<line class="whisker" x1="{_f(cx)}" y1="{_f(p10)}" x2="{_f(cx)}" y2="{_f(p90)}" stroke="#333"/>',
            f'<line class="hinge-low" x1="{_f(cx - half / 2)}" y1="{_f(p10)}" x2="{_f(cx + half / 2)}" y2="{_f(p10)}" stroke="#333"/>',
            f'<line class="hinge-high" x1="{_f(cx - half / 2)}" y1="{_f(p90)}" x2="{_f(cx + half / 2)}" y2="{_f(p90)}" stroke="#333"/>',
            f'<rect x="{_f(cx - half)}" y="{_f(p75)}" width="{_f(BOX_WIDTH)}" height="{_f(p25 - p75)}" fill="#9ecae1" stroke="#333"/>',
            f'<line class="median" x1="{_f(cx - half)}" y1="{_f(p50)}" x2="{_f(cx + half)}" y2="{_f(p50)}" stroke="#000" stroke-width="2"/>',
        ]
    out.append(f'<text x="{_f(cx)}" y="{_f(axis.bottom + 16)}" text-anchor="middle" font-size="10">'
               f'{escape(est)}</text>')
    out.append("</g>")
    return out


def render_svg(summary, metric: str = "rrmse") -> str:
    """One panel per DGP, one box per estimator; hinges at the 10/25/50/75/90 percentiles."""
    if not summary:
        raise ValueError("empty summary: nothing to plot")
    axis = axis_for(summary, metric)
    panels = {}
    for s in summary:
        panels.setdefault(s.dgp_id, []).append(s)
    widths = [LEFT_MARGIN + BOX_SPACING * len(rows) for rows in panels.values()]
    total = sum(widths) + PANEL_GAP * (len(widths) + 1)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(total)}" height="{_f(PANEL_HEIGHT)}" '
           f'data-metric="{metric}" data-axis-lo="{axis.lo!r}" data-axis-hi="{axis.hi!r}" '
           f'data-axis-top="{axis.top!r}" data-axis-bottom="{axis.bottom!r}">',
           '<rect width="100%" height="100%" fill="white"/>']
    x0 = PANEL_GAP
    ticks = [axis.lo + k * (axis.hi - axis.lo) / 4 for k in range(5)]
    for (dgp_id, rows), width in zip(sorted(panels.items()), widths):
        out.append(f'<g class="panel" data-dgp="{escape(dgp_id)}" transform="translate({_f(x0)},0)">')
        out.append(f'<text x="{_f(width / 2)}" y="20" text-anchor="middle" font-size="11">'
                   f'{escape(dgp_id)}</text>')
        out.append(f'<line x1="{_f(LEFT_MARGIN - 6)}" y1="{_f(axis.top)}" x2="{_f(LEFT_MARGIN - 6)}" '
                   f'y2="{_f(axis.bottom)}" stroke="#666"/>')
        for t in ticks:
            out.append(f'<text x="{_f(LEFT_MARGIN - 9)}" y="{_f(axis.y(t) + 3)}" text-anchor="end" '
                       f'font-size="8">{t:.2f}</text>')
        for k, s in enumerate(sorted(rows, key=lambda r: r.estimator)):
            cx = LEFT_MARGIN + BOX_SPACING * (k + 0.5)
            out += _box(s.estimator, cx, getattr(s, metric), axis)
        out.append("</g>")
        x0 += width + PANEL_GAP
    out.append(f'<text x="8" y="{_f(PANEL_HEIGHT - 8)}" font-size="10">{escape(metric)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_boxplots(summary, svg_path, metric: str = "rrmse") -> None:
    Path(svg_path).write_text(render_svg(summary, metric), encoding="utf-8")
