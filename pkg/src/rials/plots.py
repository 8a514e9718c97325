"""Minimal standalone SVG emitter for trajectories, series and sweep heatmaps.

Output is a pure function of the input: coordinates are printed with fixed
precision and no timestamps or ids are embedded, so equal data gives equal bytes.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

from .errors import InvalidParameters, NoData

__all__ = ["emit_plots", "PANEL_W", "PANEL_H"]

PANEL_W = 300
PANEL_H = 240
_MARGIN = dict(left=58, right=14, top=28, bottom=42)
_LOG_FLOOR = 1e-17
_COLORS = ("#1f5fa8", "#c8501e", "#2a8a3e", "#7b3f9e")


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _ticks(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=raw)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    x = start
    while x <= hi + 1e-9 * step:
        out.append(0.0 if abs(x) < 1e-12 * step else x)
        x += step
    return out


def _tick_label(x: float, log: bool) -> str:
    if log:
        return f"1e{int(round(x))}"
    return f"{x:g}"


class _Panel:
    def __init__(self, ox, oy, xr, yr, log_y=False):
        self.ox, self.oy = ox, oy
        self.x0, self.x1 = xr
        self.y0, self.y1 = yr
        self.log_y = log_y
        self.w = PANEL_W - _MARGIN["left"] - _MARGIN["right"]
        self.h = PANEL_H - _MARGIN["top"] - _MARGIN["bottom"]

    def px(self, x):
        span = (self.x1 - self.x0) or 1.0
        return self.ox + _MARGIN["left"] + (x - self.x0) / span * self.w

    def py(self, y):
        span = (self.y1 - self.y0) or 1.0
        return self.oy + _MARGIN["top"] + (1 - (y - self.y0) / span) * self.h

    def axes(self, xlabel, ylabel, title):
        left, top = self.ox + _MARGIN["left"], self.oy + _MARGIN["top"]
        out = [f'<rect x="{_fmt(left)}" y="{_fmt(top)}" width="{_fmt(self.w)}" height="{_fmt(self.h)}" '
               f'fill="none" stroke="#333" stroke-width="1"/>']
        for tx in _ticks(self.x0, self.x1):
            x = self.px(tx)
            out.append(f'<line x1="{_fmt(x)}" y1="{_fmt(top + self.h)}" x2="{_fmt(x)}" y2="{_fmt(top + self.h + 4)}" '
                       f'stroke="#333"/>')
            out.append(f'<text x="{_fmt(x)}" y="{_fmt(top + self.h + 16)}" font-size="10" '
                       f'text-anchor="middle">{_tick_label(tx, False)}</text>')
        for ty in _ticks(self.y0, self.y1):
            y = self.py(ty)
            out.append(f'<line x1="{_fmt(left - 4)}" y1="{_fmt(y)}" x2="{_fmt(left)}" y2="{_fmt(y)}" stroke="#333"/>')
            out.append(f'<text x="{_fmt(left - 6)}" y="{_fmt(y + 3)}" font-size="10" '
                       f'text-anchor="end">{_tick_label(ty, self.log_y)}</text>')
        out.append(f'<text x="{_fmt(left + self.w / 2)}" y="{_fmt(top + self.h + 32)}" font-size="11" '
                   f'text-anchor="middle">{escape(xlabel)}</text>')
        cx, cy = self.ox + 14, top + self.h / 2
        out.append(f'<text x="{_fmt(cx)}" y="{_fmt(cy)}" font-size="11" text-anchor="middle" '
                   f'transform="rotate(-90 {_fmt(cx)} {_fmt(cy)})">{escape(ylabel)}</text>')
        out.append(f'<text x="{_fmt(left + self.w / 2)}" y="{_fmt(self.oy + 18)}" font-size="12" '
                   f'text-anchor="middle">{escape(title)}</text>')
        return out

    def series(self, xs, ys, color, dashed=False):
        """Polyline through finite points (broken at NaNs) plus a marker per point."""
        out, seg = [], []
        dash = ' stroke-dasharray="4 3"' if dashed else ""

        def flush():
            if len(seg) > 1:
                pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in seg)
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
            seg.clear()

        for x, y in zip(xs, ys):
            if not (math.isfinite(x) and math.isfinite(y)):
                flush()
                continue
            p = (self.px(x), self.py(y))
            seg.append(p)
            out.append(f'<circle cx="{_fmt(p[0])}" cy="{_fmt(p[1])}" r="2.5" fill="{color}"/>')
        flush()
        return out


def _range(vals, pad_frac=0.0):
    vals = [v for v in vals if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = (hi - lo) * pad_frac
    return lo - pad, hi + pad


def _log(ys):
    return [math.log10(max(y, _LOG_FLOOR)) if math.isfinite(y) else math.nan for y in ys]


def _document(width, height, body):
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n')
    return head + "\n".join(body) + "\n</svg>\n"


def _trajectory_columns(data):
    if hasattr(data, "records"):
        if not data.records:
            raise NoData("empty trajectory")
        return {name: [float(x) for x in data.column(name)] for name in
                ("t", "sin_u", "cos_u", "sin_v", "cos_v")}
    cols = {k: [float(x) for x in v] for k, v in data.items() if k in ("t", "sin_u", "cos_u", "sin_v", "cos_v")}
    if not cols or not any(cols.values()):
        raise NoData("empty trajectory")
    n = len(next(iter(cols.values())))
    cols.setdefault("t", [float(i) for i in range(n)])
    for k in ("sin_u", "cos_u", "sin_v", "cos_v"):
        cols.setdefault(k, [math.nan] * n)
    return cols


def _plot_trajectory(data, log_sin=True):
    c = _trajectory_columns(data)
    t = c["t"]
    body = []
    sin_v = _log(c["sin_v"]) if log_sin else c["sin_v"]
    sin_u = _log(c["sin_u"]) if log_sin else c["sin_u"]
    tr = _range(t)
    # (a) sin vs t
    p = _Panel(0, 0, tr, _range(sin_v + sin_u, 0.05), log_y=log_sin)
    body += p.axes("iteration t", "log10 sin(theta)" if log_sin else "sin(theta)", "sin(theta_t)")
    body += p.series(t, sin_v, _COLORS[0])
    body += p.series(t, sin_u, _COLORS[1], dashed=True)
    # (b) cos vs t
    p = _Panel(PANEL_W, 0, tr, (0.0, 1.0))
    body += p.axes("iteration t", "cos(theta)", "cos(theta_t)")
    body += p.series(t, c["cos_v"], _COLORS[0])
    body += p.series(t, c["cos_u"], _COLORS[1], dashed=True)
    # (c) sin vs cos
    p = _Panel(2 * PANEL_W, 0, (0.0, 1.0), (0.0, 1.0))
    body += p.axes("cos(theta)", "sin(theta)", "sin vs cos")
    body += p.series(c["cos_v"], c["sin_v"], _COLORS[0])
    body += p.series(c["cos_u"], c["sin_u"], _COLORS[1], dashed=True)
    # legend
    lx, ly = 3 * PANEL_W - 90, PANEL_H - 8
    body.append(f'<line x1="{lx}" y1="{ly - 3}" x2="{lx + 14}" y2="{ly - 3}" stroke="{_COLORS[0]}" stroke-width="1.5"/>')
    body.append(f'<text x="{lx + 18}" y="{ly}" font-size="10">v_t</text>')
    body.append(f'<line x1="{lx + 40}" y1="{ly - 3}" x2="{lx + 54}" y2="{ly - 3}" stroke="{_COLORS[1]}" '
                f'stroke-width="1.5" stroke-dasharray="4 3"/>')
    body.append(f'<text x="{lx + 58}" y="{ly}" font-size="10">u_t</text>')
    return _document(3 * PANEL_W, PANEL_H, body)


def _plot_series(data, log_y=False):
    ys = [float(v) for v in data.get("y", [])]
    if not ys:
        raise NoData("empty series")
    xs = [float(v) for v in data.get("x", range(len(ys)))]
    if len(xs) != len(ys):
        raise InvalidParameters("x and y lengths differ")
    yv = _log(ys) if log_y else ys
    p = _Panel(0, 0, _range(xs), _range(yv, 0.05), log_y=log_y)
    body = p.axes(data.get("xlabel", "x"), data.get("ylabel", "y"), data.get("title", ""))
    body += p.series(xs, yv, _COLORS[0])
    return _document(PANEL_W, PANEL_H, body)


def _color(frac: float) -> str:
    # white-to-dark-blue ramp; frac in [0, 1]
    frac = min(max(frac, 0.0), 1.0)
    lo, hi = np.array([247, 251, 255]), np.array([8, 48, 107])
    r, g, b = (lo + (hi - lo) * frac).round().astype(int)
    return f"#{r:02x}{g:02x}{b:02x}"


def _plot_heatmap(data, vmin_log=-16.0, vmax_log=0.0):
    vals = np.asarray(data.get("values", []), dtype=float)
    if vals.size == 0:
        raise NoData("empty heatmap")
    if vals.ndim != 2:
        raise InvalidParameters("heatmap values must be a 2-D grid")
    ny, nx = vals.shape
    xs = list(data.get("x", range(nx)))
    ys = list(data.get("y", range(ny)))
    cell, left, top = 36, 64, 34
    width = left + nx * cell + 110
    height = top + ny * cell + 50
    body = [f'<text x="{left + nx * cell / 2:.2f}" y="20" font-size="12" text-anchor="middle">'
            f'{escape(str(data.get("title", "")))}</text>']
    for r in range(ny):
        # first row of values at the bottom, as in a phase-transition diagram
        y = top + (ny - 1 - r) * cell
        body.append(f'<text x="{left - 6}" y="{y + cell / 2 + 4:.2f}" font-size="10" text-anchor="end">{ys[r]:g}</text>')
        for c in range(nx):
            v = vals[r, c]
            lv = math.log10(max(v, 10 ** vmin_log)) if math.isfinite(v) else vmax_log
            frac = (vmax_log - lv) / (vmax_log - vmin_log)
            body.append(f'<rect class="cell" x="{left + c * cell}" y="{y}" width="{cell}" height="{cell}" '
                        f'fill="{_color(frac)}" stroke="#fff" stroke-width="0.5"><title>{v:.3g}</title></rect>')
    for c in range(nx):
        body.append(f'<text x="{left + c * cell + cell / 2:.2f}" y="{top + ny * cell + 14}" font-size="10" '
                    f'text-anchor="middle">{xs[c]:g}</text>')
    body.append(f'<text x="{left + nx * cell / 2:.2f}" y="{top + ny * cell + 34}" font-size="11" '
                f'text-anchor="middle">{escape(str(data.get("xlabel", "")))}</text>')
    body.append(f'<text x="16" y="{top + ny * cell / 2:.2f}" font-size="11" text-anchor="middle" '
                f'transform="rotate(-90 16 {top + ny * cell / 2:.2f})">{escape(str(data.get("ylabel", "")))}</text>')
    # legend: log10 color bar
    lx, steps = left + nx * cell + 24, 8
    bar_h = max(ny * cell, 80)
    body.append(f'<g class="legend">')
    for k in range(steps):
        frac = k / (steps - 1)
        yk = top + k * bar_h / steps
        body.append(f'<rect x="{lx}" y="{yk:.2f}" width="14" height="{bar_h / steps:.2f}" fill="{_color(frac)}"/>')
    body.append(f'<text x="{lx + 18}" y="{top + 8}" font-size="10">1e{vmax_log:g}</text>')
    body.append(f'<text x="{lx + 18}" y="{top + bar_h:.2f}" font-size="10">1e{vmin_log:g}</text>')
    body.append(f'<text x="{lx}" y="{top - 6}" font-size="10">median err</text>')
    body.append("</g>")
    return _document(width, max(height, top + bar_h + 20), body)


def emit_plots(data, kind: str, path=None, **opts) -> str:
    """Render ``data`` as an SVG document and optionally write it to ``path``.

    ``kind`` is ``"trajectory"`` (three panels: sin vs t, cos vs t, sin vs
    cos), ``"series"`` (one x/y panel) or ``"heatmap"`` (grid of median
    errors on a log color scale). Empty data raises :class:`NoData`.
    """
    if data is None:
        raise NoData("no data to plot")
    if kind == "trajectory":
        svg = _plot_trajectory(data, **opts)
    elif kind == "series":
        svg = _plot_series(data, **opts)
    elif kind == "heatmap":
        svg = _plot_heatmap(data, **opts)
    else:
        raise InvalidParameters(f"unknown plot kind {kind!r}")
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(svg)
    return svg
