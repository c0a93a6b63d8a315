"""Tiny dependency-free SVG plotting: line panels and scatter plots."""
from __future__ import annotations

from dataclasses import dataclass, field
from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


@dataclass
class Panel:
    title: str
    xlabel: str
    ylabel: str
    series: list = field(default_factory=list)  # (label, xs, ys)
    points: list = field(default_factory=list)  # (x, y, radius, color)


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _range(values):
    lo, hi = min(values), max(values)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def render(panels: list[Panel], width: int = 420, height: int = 300) -> str:
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width * len(panels)}" height="{height}" '
             f'font-family="sans-serif" font-size="11">']
    for i, p in enumerate(panels):
        parts.append(_panel(p, i * width, width, height))
    parts.append("</svg>\n")
    return "\n".join(parts)


def _panel(p: Panel, x0: int, width: int, height: int) -> str:
    left, right, top, bottom = 55, 15, 25, 40
    xs = [x for _, sx, _ in p.series for x in sx] + [q[0] for q in p.points]
    ys = [y for _, _, sy in p.series for y in sy] + [q[1] for q in p.points]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    (xlo, xhi), (ylo, yhi) = _range(xs), _range(ys)

    def px(x):
        return x0 + left + (x - xlo) / (xhi - xlo) * (width - left - right)

    def py(y):
        return top + (yhi - y) / (yhi - ylo) * (height - top - bottom)

    out = [f'<g class="panel">',
           f'<text x="{x0 + width / 2:.1f}" y="15" text-anchor="middle">{escape(p.title)}</text>',
           f'<rect x="{x0 + left}" y="{top}" width="{width - left - right}" height="{height - top - bottom}" '
           f'fill="none" stroke="#444"/>']
    for k in range(5):
        tx = xlo + (xhi - xlo) * (k + 0.5) / 5
        ty = ylo + (yhi - ylo) * (k + 0.5) / 5
        out.append(f'<text x="{px(tx):.1f}" y="{height - bottom + 14}" text-anchor="middle">{_fmt(tx)}</text>')
        out.append(f'<text x="{x0 + left - 4}" y="{py(ty) + 4:.1f}" text-anchor="end">{_fmt(ty)}</text>')
    out.append(f'<text x="{x0 + width / 2:.1f}" y="{height - 6}" text-anchor="middle">{escape(p.xlabel)}</text>')
    out.append(f'<text x="{x0 + 12}" y="{top + (height - top - bottom) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 {x0 + 12} {top + (height - top - bottom) / 2:.1f})">{escape(p.ylabel)}</text>')
    for j, (label, sx, sy) in enumerate(p.series):
        color = PALETTE[j % len(PALETTE)]
        d = " ".join(f"{'M' if n == 0 else 'L'}{px(x):.2f},{py(y):.2f}" for n, (x, y) in enumerate(zip(sx, sy)))
        out.append(f'<path class="series" data-label="{escape(label)}" d="{d}" fill="none" '
                   f'stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{x0 + width - right - 4}" y="{top + 14 + 13 * j}" text-anchor="end" '
                   f'fill="{color}">{escape(label)}</text>')
    for x, y, r, color in p.points:
        out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="{r:.2f}" fill="{color}" fill-opacity="0.7"/>')
    out.append("</g>")
    return "\n".join(out)
