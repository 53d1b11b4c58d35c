"""Deterministic SVG rendering of run logs: trajectory maps and speed
profiles.  No plotting dependency; output bytes are a pure function of the
log and scenario."""

from __future__ import annotations

import numpy as np

from .sim import SimLog


def _decimate(n_records: int, cap: int = 2000) -> np.ndarray:
    """Indices drawn at a fixed stride (last record always kept) so large
    logs render to reasonably sized files."""
    stride = max(1, n_records // cap)
    idx = np.arange(0, n_records, stride)
    if idx[-1] != n_records - 1:
        idx = np.append(idx, n_records - 1)
    return idx

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f")

_W = 720
_H = 540
_MARGIN = 48


def _fmt(v: float) -> str:
    return f"{v:.6g}"


class _Canvas:
    def __init__(self, x_range, y_range, flip_y=True):
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range
        self.flip_y = flip_y
        self.sx = (_W - 2 * _MARGIN) / (self.x1 - self.x0)
        self.sy = (_H - 2 * _MARGIN) / (self.y1 - self.y0)
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
            f'viewBox="0 0 {_W} {_H}">',
            f'<rect width="{_W}" height="{_H}" fill="#ffffff"/>',
        ]

    def px(self, x):
        return _MARGIN + (x - self.x0) * self.sx

    def py(self, y):
        if self.flip_y:
            return _H - _MARGIN - (y - self.y0) * self.sy
        return _MARGIN + (y - self.y0) * self.sy

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}"
                       for x, y in zip(xs, ys))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" '
                          f'stroke="{color}" stroke-width="{width}"{dash_attr}/>')

    def circle(self, x, y, r_world, fill, stroke="none", opacity=1.0):
        self.parts.append(
            f'<circle cx="{_fmt(self.px(x))}" cy="{_fmt(self.py(y))}" '
            f'r="{_fmt(abs(r_world) * self.sx)}" fill="{fill}" '
            f'stroke="{stroke}" opacity="{_fmt(opacity)}"/>')

    def marker(self, x, y, color):
        cx, cy = self.px(x), self.py(y)
        self.parts.append(
            f'<path d="M {_fmt(cx - 5)} {_fmt(cy)} L {_fmt(cx + 5)} {_fmt(cy)} '
            f'M {_fmt(cx)} {_fmt(cy - 5)} L {_fmt(cx)} {_fmt(cy + 5)}" '
            f'stroke="{color}" stroke-width="1.5" fill="none"/>')

    def text(self, x_px, y_px, s, size=12, color="#333333"):
        self.parts.append(f'<text x="{_fmt(x_px)}" y="{_fmt(y_px)}" '
                          f'font-family="sans-serif" font-size="{size}" '
                          f'fill="{color}">{s}</text>')

    def frame(self, x_label, y_label):
        self.parts.append(
            f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_W - 2 * _MARGIN}" '
            f'height="{_H - 2 * _MARGIN}" fill="none" stroke="#888888"/>')
        self.text(_W / 2 - 20, _H - 12, x_label)
        self.text(10, _MARGIN - 10, y_label)
        self.text(_MARGIN, _H - _MARGIN + 16, _fmt(self.x0), size=10)
        self.text(_W - _MARGIN - 30, _H - _MARGIN + 16, _fmt(self.x1), size=10)
        if self.flip_y:
            self.text(_MARGIN - 40, _H - _MARGIN, _fmt(self.y0), size=10)
            self.text(_MARGIN - 40, _MARGIN + 10, _fmt(self.y1), size=10)
        else:
            self.text(_MARGIN - 40, _MARGIN + 10, _fmt(self.y0), size=10)
            self.text(_MARGIN - 40, _H - _MARGIN, _fmt(self.y1), size=10)

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def plot_trajectories(log: SimLog) -> str:
    """2D paths with the robot disks at their final poses, goal markers, and
    obstacle disks (start outlined, final shaded, path dashed)."""
    spec = log.spec
    xs = [log.pose[:, :, 0].min(), log.pose[:, :, 0].max()]
    ys = [log.pose[:, :, 1].min(), log.pose[:, :, 1].max()]
    t_end = float(log.t[-1])
    for obs in spec.obstacles:
        for t in (0.0, t_end):
            px, py = obs.position_at(t)
            xs += [px - obs.radius, px + obs.radius]
            ys += [py - obs.radius, py + obs.radius]
    for setup in spec.robots:
        xs += [setup.reference.goal[0]]
        ys += [setup.reference.goal[1]]
    pad = 0.05 * max(xs[1] - xs[0], ys[1] - ys[0], 1.0)
    lo_x, hi_x = min(xs) - pad, max(xs) + pad
    lo_y, hi_y = min(ys) - pad, max(ys) + pad
    # equal aspect: widen the smaller span
    span = max(hi_x - lo_x, hi_y - lo_y)
    cx, cy = 0.5 * (lo_x + hi_x), 0.5 * (lo_y + hi_y)
    canvas = _Canvas((cx - span / 2, cx + span / 2), (cy - span / 2, cy + span / 2))
    for k, obs in enumerate(spec.obstacles):
        p0 = obs.position_at(0.0)
        p1 = obs.position_at(t_end)
        canvas.circle(p0[0], p0[1], obs.radius, "none", stroke="#999999")
        if obs.velocity != (0.0, 0.0):
            canvas.polyline([p0[0], p1[0]], [p0[1], p1[1]], "#999999",
                            width=1.0, dash="4 3")
        canvas.circle(p1[0], p1[1], obs.radius, "#bbbbbb", opacity=0.7)
        canvas.text(canvas.px(p1[0]) + 4, canvas.py(p1[1]) - 4, f"obs{k + 1}", size=10)
    idx = _decimate(log.n_records)
    for i in range(log.n_robots):
        color = _PALETTE[i % len(_PALETTE)]
        canvas.polyline(log.pose[idx, i, 0], log.pose[idx, i, 1], color)
        canvas.circle(log.pose[-1, i, 0], log.pose[-1, i, 1],
                      spec.robots[i].params.body_radius, color, opacity=0.5)
        goal = spec.robots[i].reference.goal
        canvas.marker(goal[0], goal[1], color)
    canvas.frame("x [m]", "y [m]")
    return canvas.render()


def plot_speeds(log: SimLog) -> str:
    """Planar speed of every robot against time."""
    speeds = log.speeds()
    top = max(float(np.max(speeds)) * 1.1, 0.1)
    t_end = max(float(log.t[-1]), log.dt)
    canvas = _Canvas((0.0, t_end), (0.0, top))
    idx = _decimate(log.n_records, cap=4000)
    for i in range(log.n_robots):
        canvas.polyline(log.t[idx], speeds[idx, i], _PALETTE[i % len(_PALETTE)],
                        width=1.2)
    canvas.frame("t [s]", "speed [m/s]")
    return canvas.render()
