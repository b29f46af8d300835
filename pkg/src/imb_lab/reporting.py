"""Info-plane CSV files, seed-averaged traces and SVG scatter plots."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .exact import InfoPlanePoint

INFO_PLANE_HEADER = ("epoch", "layer", "i_zx_bits", "i_zy_bits")


def write_info_plane_csv(points, path):
    """One row per ``(epoch, layer)``, sorted, UTF-8 with LF line endings."""
    rows = sorted(points, key=lambda p: (p.epoch, p.layer))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INFO_PLANE_HEADER)
        for p in rows:
            writer.writerow([p.epoch, p.layer, f"{p.i_x:.12g}", f"{p.i_y:.12g}"])


def read_info_plane_csv(path) -> list[InfoPlanePoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != INFO_PLANE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(INFO_PLANE_HEADER)}")
        return [InfoPlanePoint(int(e), int(l), float(x), float(y)) for e, l, x, y in reader]


def mean_trace(traces) -> list[InfoPlanePoint]:
    """Pointwise mean over seeds of every ``(epoch, layer)`` present in all traces."""
    groups = defaultdict(list)
    for trace in traces:
        for p in trace:
            groups[(p.epoch, p.layer)].append(p)
    n = len(traces)
    out = []
    for (epoch, layer), pts in sorted(groups.items()):
        if len(pts) == n:
            out.append(InfoPlanePoint(epoch, layer, float(np.mean([p.i_x for p in pts])), float(np.mean([p.i_y for p in pts]))))
    return out


def _ramp(t):
    """Blue-to-yellow color for ``t`` in [0, 1]."""
    lo, hi = np.array([45, 20, 120]), np.array([250, 210, 40])
    r, g, b = (lo + (hi - lo) * float(t)).astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def info_plane_svg(points, path, *, title="information plane", width=640, height=480):
    """Scatter of ``I(Z;X)`` (horizontal) against ``I(Z;Y)`` (vertical), colored by epoch."""
    margin = 60
    pts = list(points)
    xmax = max([p.i_x for p in pts] + [1e-9]) * 1.05
    ymax = max([p.i_y for p in pts] + [1e-9]) * 1.05
    epochs = sorted({p.epoch for p in pts}) or [0]
    span = max(epochs[-1] - epochs[0], 1)
    sx = lambda v: margin + v / xmax * (width - 2 * margin)  # noqa: E731
    sy = lambda v: height - margin - v / ymax * (height - 2 * margin)  # noqa: E731
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="24" text-anchor="middle" font-size="16">{escape(title)}</text>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 15}" text-anchor="middle" font-size="13">I(Z;X) [bits]</text>',
        f'<text x="18" y="{height / 2}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {height / 2})">I(Z;Y) [bits]</text>',
    ]
    for k in range(5):
        vx, vy = xmax * k / 4, ymax * k / 4
        out.append(f'<text x="{sx(vx):.1f}" y="{height - margin + 16}" text-anchor="middle" font-size="10">{vx:.2f}</text>')
        out.append(f'<text x="{margin - 6}" y="{sy(vy) + 3:.1f}" text-anchor="end" font-size="10">{vy:.2f}</text>')
    for p in sorted(pts, key=lambda p: (p.epoch, p.layer)):
        color = _ramp((p.epoch - epochs[0]) / span)
        out.append(
            f'<circle cx="{sx(p.i_x):.2f}" cy="{sy(p.i_y):.2f}" r="3" fill="{color}">'
            f"<title>epoch {p.epoch}, layer {p.layer}</title></circle>"
        )
    out.append(
        f'<text x="{width - margin}" y="{margin - 8}" text-anchor="end" font-size="10">'
        f"epochs {epochs[0]}..{epochs[-1]}</text>"
    )
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")
