"""Deterministic SVG line plots for calibration and precision-recall curves."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .evaluation import CalibrationCurve, PRCurve

WIDTH, HEIGHT, MARGIN = 360, 360, 48


def _xy(x: float, y: float, ylo: float, yhi: float) -> tuple[float, float]:
    inner_w, inner_h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
    px = MARGIN + x * inner_w
    py = HEIGHT - MARGIN - (y - ylo) / (yhi - ylo) * inner_h
    return round(px, 3), round(py, 3)


def render_svg(curve: CalibrationCurve | PRCurve, kind: str, title: str = "", comment: str = "") -> str:
    if kind not in ("calibration", "pr"):
        raise ValueError(f"unknown plot kind {kind!r}")
    if len(curve) == 0:
        raise ValueError("cannot plot an empty curve")
    if kind == "calibration":
        xs, ys = np.asarray(curve.grid), np.asarray(curve.observed)
        ylo, yhi, xlabel, ylabel = 0.0, 1.0, "nominal", "observed frequency"
    else:
        xs, ys = np.asarray(curve.recall), np.asarray(curve.value)
        ylo, yhi = float(min(ys.min(), 0.0)), float(ys.max())
        yhi = yhi if yhi > ylo else ylo + 1.0
        xlabel, ylabel = "recall (fraction retained)", "precision / error"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">'
    ]
    if comment:
        out.append(f"<!-- {escape(comment)} -->")
    out.append(f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    (x0, y0), (x1, y1) = _xy(0, ylo, ylo, yhi), _xy(1, yhi, ylo, yhi)
    out.append(f'<rect x="{x0}" y="{y1}" width="{x1 - x0}" height="{y0 - y1}" fill="none" stroke="#888"/>')
    if kind == "calibration":
        out.append(
            f'<line id="reference-diagonal" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="black" stroke-dasharray="4 3"/>'
        )
    points = " ".join("{},{}".format(*_xy(float(x), float(y), ylo, yhi)) for x, y in zip(xs, ys))
    out.append(f'<polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="2"/>')
    for x, y in zip(xs, ys):
        px, py = _xy(float(x), float(y), ylo, yhi)
        out.append(f'<circle cx="{px}" cy="{py}" r="2.5" fill="#1f77b4"/>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">{xlabel}</text>')
    out.append(
        f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {HEIGHT / 2})">{ylabel}</text>'
    )
    out.append(f'<text x="{x0}" y="{y0 + 14}" font-size="10">0</text>')
    out.append(f'<text x="{x1 - 6}" y="{y0 + 14}" font-size="10">1</text>')
    out.append(f'<text x="{x0 - 4}" y="{y0}" text-anchor="end" font-size="10">{ylo:.3g}</text>')
    out.append(f'<text x="{x0 - 4}" y="{y1 + 8}" text-anchor="end" font-size="10">{yhi:.3g}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(curve, kind: str, path, title: str = "", comment: str = "") -> Path:
    """Write ``curve`` as an SVG; identical inputs give byte-identical files."""
    svg = render_svg(curve, kind, title, comment)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(svg)
    tmp.replace(path)
    return path
