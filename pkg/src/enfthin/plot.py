"""Minimal self-contained SVG rendering of envelopes."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT, PAD = 480, 320, 40


def _polyline(x, y, sx, sy, style) -> str:
    pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y) if np.isfinite(b))
    return f'<polyline fill="none" {style} points="{pts}"/>'


def envelope_svg(envelope, title: str = "", reference: float = 0.0) -> str:
    """SVG with polylines for the band edges, the observed curve and a reference level."""
    grid = np.asarray(envelope.grid, dtype=float)
    ys = [envelope.lo, envelope.hi, [reference]]
    if envelope.observed is not None:
        ys.append(envelope.observed.values)
    finite = np.concatenate([np.asarray(v, float)[np.isfinite(v)] for v in ys])
    y0, y1 = float(finite.min()), float(finite.max())
    if y1 <= y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    x0, x1 = float(grid[0]), float(grid[-1]) if grid[-1] > grid[0] else grid[0] + 1.0

    def sx(v):
        return PAD + (v - x0) / (x1 - x0) * (WIDTH - 2 * PAD)

    def sy(v):
        return HEIGHT - PAD - (v - y0) / (y1 - y0) * (HEIGHT - 2 * PAD)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<text x="{PAD}" y="{PAD / 2:.0f}" font-size="12">{escape(title)}</text>',
        _polyline(grid, envelope.lo, sx, sy, 'stroke="grey" class="lo"'),
        _polyline(grid, envelope.hi, sx, sy, 'stroke="grey" class="hi"'),
    ]
    if envelope.observed is not None:
        parts.append(_polyline(grid, envelope.observed.values, sx, sy, 'stroke="red" class="observed"'))
    parts.append(
        _polyline(grid[[0, -1]], [reference, reference], sx, sy,
                  'stroke="black" stroke-dasharray="4 3" class="reference"')
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
