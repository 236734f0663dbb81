"""Top-down trajectory plot written as a binary PPM."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .scenario import Episode, Scenario

SIZE = 256
PX_PER_M = 2.0
ORIGIN_ROW = SIZE - 0.5  # ego origin falls in the centre of the bottom pixel row
ORIGIN_COL = SIZE / 2

COLORS = {
    "background": (0, 0, 0),
    "route": (128, 128, 128),
    "stop_line": (255, 255, 255),
    "obstacle": (0, 0, 255),
    "gt": (0, 255, 0),
    "pred": (255, 0, 0),
}


def to_pixel(x, y):
    """Ego frame (x forward, y left) to (row, col) floats."""
    return ORIGIN_ROW - PX_PER_M * np.asarray(x), ORIGIN_COL - PX_PER_M * np.asarray(y)


class Canvas:
    def __init__(self):
        self.rgb = np.zeros((SIZE, SIZE, 3), dtype=np.uint8)
        self.rgb[:] = COLORS["background"]

    def plot(self, rows, cols, color) -> None:
        r = np.floor(np.asarray(rows)).astype(np.int64)
        c = np.floor(np.asarray(cols)).astype(np.int64)
        ok = (r >= 0) & (r < SIZE) & (c >= 0) & (c < SIZE)
        self.rgb[r[ok], c[ok]] = color

    def polyline(self, xy: np.ndarray, color) -> None:
        """Draw straight segments between consecutive metric points, sampled at quarter pixels."""
        rows, cols = to_pixel(xy[:, 0], xy[:, 1])
        for i in range(len(xy) - 1):
            n = max(2, int(math.ceil(4 * max(abs(rows[i + 1] - rows[i]), abs(cols[i + 1] - cols[i])))) + 1)
            t = np.linspace(0.0, 1.0, n)
            self.plot(rows[i] + t * (rows[i + 1] - rows[i]), cols[i] + t * (cols[i + 1] - cols[i]), color)

    def fill_rect(self, x0, x1, y0, y1, color) -> None:
        r0, c0 = to_pixel(x1, y1)
        r1, c1 = to_pixel(x0, y0)
        rr = np.arange(max(0, int(np.floor(r0))), min(SIZE, int(np.ceil(r1))))
        cc = np.arange(max(0, int(np.floor(c0))), min(SIZE, int(np.ceil(c1))))
        self.rgb[np.ix_(rr, cc)] = color

    def to_ppm(self) -> bytes:
        return f"P6\n{SIZE} {SIZE}\n255\n".encode("ascii") + self.rgb.tobytes()


def route_points(s: Scenario, step: float = 0.25) -> np.ndarray:
    """Centre line of the maneuver's route in the ego frame, covering the visible area."""
    reach = ORIGIN_ROW / PX_PER_M + 5.0
    back = np.arange(-10.0, 0.0, step)
    if s.turn_sign == 0:
        xs = np.concatenate([back, np.arange(0.0, reach, step)])
        return np.stack([xs, np.zeros_like(xs)], axis=1)
    r, sg = s.radius, s.turn_sign
    theta = np.linspace(0.0, math.pi / 2, max(8, int(r * math.pi / 2 / step)))
    arc = np.stack([r * np.sin(theta), sg * r * (1.0 - np.cos(theta))], axis=1)
    out = np.arange(step, reach, step)
    exit_leg = np.stack([np.full_like(out, r), sg * (r + out)], axis=1)
    return np.vstack([np.stack([back, np.zeros_like(back)], axis=1), arc, exit_leg])


def _with_origin(traj) -> np.ndarray:
    return np.vstack([[0.0, 0.0], np.asarray(traj, dtype=np.float64).reshape(-1, 6)[:, :2]])


def render_plot_bytes(episode: Episode, pred) -> bytes:
    s = episode.scenario
    canvas = Canvas()
    if s is not None:
        canvas.polyline(route_points(s), COLORS["route"])
        if s.d_stop is not None and s.maneuver != "STOP_AND_GO":
            canvas.fill_rect(s.d_stop - 0.25, s.d_stop + 0.25, -3.5, 3.5, COLORS["stop_line"])
        for ob in s.obstacles:
            canvas.fill_rect(ob.cx - ob.length / 2, ob.cx + ob.length / 2,
                             ob.cy - ob.width / 2, ob.cy + ob.width / 2, COLORS["obstacle"])
    canvas.polyline(_with_origin(episode.gt_traj), COLORS["gt"])
    canvas.polyline(_with_origin(pred), COLORS["pred"])
    return canvas.to_ppm()


def render_plot(episode: Episode, pred, path) -> None:
    Path(path).write_bytes(render_plot_bytes(episode, pred))
