"""Synthetic driving scenarios with closed-form ground truth.

Coordinates are in the ego frame at t = 0: x forward, y left, angles
counter-clockwise. Trajectories are ``[10, 6]`` arrays of
``(x, y, vx, vy, ax, ay)`` at t = 0.5, 1.0, ..., 5.0 s. The ego history is
four states at t = -1.5, -1.0, -0.5, 0 s, each
``(x, y, cos h, sin h, vx, vy, ax, ay)``, flattened oldest first.

Camera raster (64 x 64 RGB, row 0 at the top). All values are fixed:

* background 0.1; horizon at row 24; ground distance ``d`` metres projects to
  row ``24 + 195 / d`` (focal 130 px, camera height 1.5 m);
* road: gray 0.5 where ``|col + 0.5 - 32| <= 2 * (row + 0.5 - 24)``;
* centre line: white dashes in columns 31-32, rows 26-63, 3 on / 3 off;
* turn intersection: a full-width band of value 0.7 from row ``44 - R / 2`` to
  row 44 (sub-pixel coverage), so the radius is visible but not the direction;
* stop line: white, one pixel thick, centred on the row of ``d_stop``;
* traffic light: rows 4-9, columns 50-55, pure red or pure green;
* stop sign: rows 4-9, columns 8-13, pure red;
* obstacles: blue boxes whose bottom sits on the row of their rear edge, with
  height ``195 / d`` and width ``260 / d`` pixels (1.5 m x 2.0 m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import MASK64, SplitMix64, derive_seed

MANEUVERS = ("STRAIGHT", "LEFT", "RIGHT", "STOP", "STOP_AND_GO")
LIGHTS = ("RED", "GREEN", "NONE")
DT = 0.5
HORIZON = 10
TIMES = DT * np.arange(1, HORIZON + 1)
HISTORY_TIMES = np.array([-1.5, -1.0, -0.5, 0.0])

MAX_LAT_ACC = 3.0
MAX_STOP_DECEL = 3.5
MAX_STOP_TIME = 4.5
MAX_SAG_STOP_TIME = 3.5
HOLD_TIME = 1.0
GO_ACCEL = 2.0
LEAD_GAP = 2.0
VEHICLE_LENGTH = 4.5
VEHICLE_WIDTH = 2.0

PROMPT = "please generate a safe trajectory for next 5 seconds"

NAV_TEMPLATES = {
    "default": {
        "STRAIGHT": "go straight for 50 meters",
        "LEFT": "turn left now",
        "RIGHT": "turn right now",
        "STOP": "stop at the stop line",
        "STOP_AND_GO": "proceed through the toll booth",
    },
    "rephrased": {
        "STRAIGHT": "continue ahead on this road",
        "LEFT": "make a left turn here",
        "RIGHT": "make a right turn here",
        "STOP": "halt at the marked line",
        "STOP_AND_GO": "pass the toll gate after waiting",
    },
}

RATIONALES = {
    ("STRAIGHT", "GREEN"): "proceeding on the green light",
    ("STRAIGHT", "NONE"): "keeping lane and going straight",
    ("LEFT", None): "turning left as instructed",
    ("RIGHT", None): "turning right as instructed",
    ("STOP", "RED"): "stopping for the red light",
    ("STOP", "SIGN"): "stopping at the stop sign",
    ("STOP_AND_GO", None): "stopping then proceeding slowly",
}

# raster constants
IMG = 64
HORIZON_ROW = 24.0
GROUND_K = 195.0
FOCAL = 130.0
BACKGROUND = 0.1
ROAD = 0.5
BAND = 0.7
BAND_BOTTOM = 44.0
LIGHT_BOX = (4, 10, 50, 56)
SIGN_BOX = (4, 10, 8, 14)
RED = (1.0, 0.0, 0.0)
GREEN = (0.0, 1.0, 0.0)
BLUE = (0.0, 0.0, 1.0)


@dataclass(frozen=True)
class Obstacle:
    """Rectangle aligned with the ego x axis; optionally starts moving forward."""

    cx: float
    cy: float
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    t_move: float = math.inf
    accel: float = 0.0

    def center_at(self, t: float) -> tuple[float, float]:
        if t <= self.t_move:
            return self.cx, self.cy
        return self.cx + 0.5 * self.accel * (t - self.t_move) ** 2, self.cy

    def to_dict(self) -> dict:
        return {"cx": self.cx, "cy": self.cy, "length": self.length, "width": self.width,
                "t_move": None if math.isinf(self.t_move) else self.t_move, "accel": self.accel}

    @classmethod
    def from_dict(cls, d: dict) -> "Obstacle":
        t_move = d.get("t_move")
        return cls(d["cx"], d["cy"], d["length"], d["width"], math.inf if t_move is None else t_move, d["accel"])


@dataclass(frozen=True)
class Scenario:
    seed: int
    maneuver: str
    v0: float
    radius: float | None = None
    d_stop: float | None = None
    light: str = "NONE"
    stop_sign: bool = False
    obstacles: tuple[Obstacle, ...] = field(default_factory=tuple)

    @property
    def v_turn(self) -> float:
        return min(self.v0, math.sqrt(MAX_LAT_ACC * self.radius))

    @property
    def turn_sign(self) -> int:
        return {"LEFT": 1, "RIGHT": -1}.get(self.maneuver, 0)

    @property
    def stop_time(self) -> float:
        return 2.0 * self.d_stop / self.v0

    def to_dict(self) -> dict:
        return {"seed": self.seed, "maneuver": self.maneuver, "v0": self.v0, "radius": self.radius,
                "d_stop": self.d_stop, "light": self.light, "stop_sign": self.stop_sign,
                "obstacles": [o.to_dict() for o in self.obstacles]}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(d["seed"], d["maneuver"], d["v0"], d.get("radius"), d.get("d_stop"), d.get("light", "NONE"),
                   bool(d.get("stop_sign", False)), tuple(Obstacle.from_dict(o) for o in d.get("obstacles", ())))


# ------------------------------------------------------------------ sampling


def _stop_speed(u: float, d: float, max_time: float) -> float:
    lo = max(5.0, 2.0 * d / max_time)
    hi = min(15.0, math.sqrt(2.0 * MAX_STOP_DECEL * d))
    return lo + (hi - lo) * u


def lead_vehicle(d_stop: float, v0: float) -> Obstacle:
    """Vehicle queued ahead of the ego stop point; it pulls away 0.5 s before the ego does."""
    t_stop = 2.0 * d_stop / v0
    return Obstacle(cx=d_stop + VEHICLE_LENGTH + LEAD_GAP, cy=0.0, t_move=t_stop + HOLD_TIME - 0.5, accel=GO_ACCEL)


def sample_scenario(seed: int) -> Scenario:
    """Draw a scenario from five uniforms taken in a fixed order.

    ``u0`` picks the maneuver, ``u1`` the speed, ``u2`` the turn radius, ``u3``
    the stop distance and ``u4`` the light / sign choice. Stop distances and
    speeds are drawn jointly so that braking stays at or below 3.5 m/s^2 and
    the ego comes to rest inside the horizon.
    """
    rng = SplitMix64(seed)
    u0, u1, u2, u3, u4 = (rng.uniform() for _ in range(5))
    maneuver = MANEUVERS[min(4, int(u0 * 5))]
    if maneuver == "STRAIGHT":
        if u4 < 0.5:
            d = 15.0 + 18.0 * u3
            return Scenario(seed, maneuver, _stop_speed(u1, d, MAX_STOP_TIME), d_stop=d, light="GREEN")
        return Scenario(seed, maneuver, 5.0 + 10.0 * u1)
    if maneuver in ("LEFT", "RIGHT"):
        return Scenario(seed, maneuver, 5.0 + 10.0 * u1, radius=8.0 + 12.0 * u2,
                        light="GREEN" if u4 < 0.5 else "NONE")
    if maneuver == "STOP":
        d = 15.0 + 18.0 * u3
        v0 = _stop_speed(u1, d, MAX_STOP_TIME)
        if u4 < 0.5:
            return Scenario(seed, maneuver, v0, d_stop=d, light="RED")
        return Scenario(seed, maneuver, v0, d_stop=d, stop_sign=True)
    d = 15.0 + 5.0 * u3
    v0 = _stop_speed(u1, d, MAX_SAG_STOP_TIME)
    return Scenario(seed, maneuver, v0, d_stop=d, obstacles=(lead_vehicle(d, v0),))


def with_light(s: Scenario, light: str) -> Scenario:
    """Same geometry on a straight route, with the signal set to ``light``.

    RED makes it a stop at the light, GREEN a straight pass.
    """
    if s.maneuver not in ("STRAIGHT", "STOP") or s.light not in ("RED", "GREEN"):
        raise ValueError("light swaps are defined for straight-route intersections only")
    maneuver = "STOP" if light == "RED" else "STRAIGHT"
    return replace(s, maneuver=maneuver, light=light, stop_sign=False)


# ------------------------------------------------------------------ kinematics


def ego_history(s: Scenario) -> np.ndarray:
    t = HISTORY_TIMES
    hist = np.zeros((4, 8))
    hist[:, 0] = s.v0 * t
    hist[:, 2] = 1.0
    hist[:, 4] = s.v0
    return hist.reshape(-1)


def _straight(s: Scenario, t: float):
    return s.v0 * t, 0.0, s.v0, 0.0, 0.0, 0.0


def _turn(s: Scenario, t: float):
    v, r, sg = s.v_turn, s.radius, s.turn_sign
    omega = v / r
    t_arc = (math.pi / 2) / omega
    if t <= t_arc:
        phi = omega * t
        c = v * v / r
        return (r * math.sin(phi), sg * r * (1 - math.cos(phi)), v * math.cos(phi), sg * v * math.sin(phi),
                -c * math.sin(phi), sg * c * math.cos(phi))
    return r, sg * (r + v * (t - t_arc)), 0.0, sg * v, 0.0, 0.0


def _brake(v0: float, d: float, t: float):
    """Constant deceleration from ``v0`` to rest after distance ``d``; returns (x, v, a)."""
    a = -v0 * v0 / (2.0 * d)
    t_stop = 2.0 * d / v0
    if t < t_stop:
        return v0 * t + 0.5 * a * t * t, v0 + a * t, a
    return d, 0.0, 0.0


def _stop(s: Scenario, t: float):
    x, v, a = _brake(s.v0, s.d_stop, t)
    return x, 0.0, v, 0.0, a, 0.0


def _stop_and_go(s: Scenario, t: float):
    t_go = s.stop_time + HOLD_TIME
    if t <= t_go:
        return _stop(s, t)
    tau = t - t_go
    return s.d_stop + 0.5 * GO_ACCEL * tau * tau, 0.0, GO_ACCEL * tau, 0.0, GO_ACCEL, 0.0


_PROFILES = {"STRAIGHT": _straight, "LEFT": _turn, "RIGHT": _turn, "STOP": _stop, "STOP_AND_GO": _stop_and_go}


def state_at(s: Scenario, t: float) -> tuple[float, ...]:
    """Exact (x, y, vx, vy, ax, ay) at time ``t`` >= 0."""
    return _PROFILES[s.maneuver](s, t)


def rollout_gt(s: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Ego history (32 values) and the ground-truth trajectory ``[10, 6]``."""
    traj = np.array([state_at(s, float(t)) for t in TIMES])
    return ego_history(s), traj


def kinematic_violation(traj: np.ndarray, dt: float = DT) -> float:
    """Largest per-axis gap between finite-difference and mean waypoint velocity."""
    traj = np.asarray(traj).reshape(HORIZON, 6)
    fd = (traj[1:, 0:2] - traj[:-1, 0:2]) / dt
    mean_v = 0.5 * (traj[1:, 2:4] + traj[:-1, 2:4])
    return float(np.abs(fd - mean_v).max())


# ------------------------------------------------------------------ route


def route_offset(s: Scenario, x: float, y: float) -> float:
    """Distance from ``(x, y)`` to the maneuver's centre line.

    Straight-route maneuvers follow the x axis. Turns follow the incoming
    x axis (x <= 0), a quarter arc of radius R, then the outgoing straight.
    """
    if s.turn_sign == 0:
        return abs(y)
    r, sg = s.radius, s.turn_sign
    best = math.hypot(x, y) if x > 0 else abs(y)
    cx, cy = 0.0, sg * r
    a, b = x - cx, y - cy
    if a >= 0 and sg * b <= 0:
        best = min(best, abs(math.hypot(a, b) - r))
    else:
        best = min(best, math.hypot(x, y), math.hypot(x - r, y - sg * r))
    along = sg * (y - sg * r)
    best = min(best, abs(x - r) if along >= 0 else math.hypot(x - r, y - sg * r))
    return best


# ------------------------------------------------------------------ rendering


def ground_row(d: float) -> float:
    return HORIZON_ROW + GROUND_K / d


def _fill_box(img, r0, r1, c0, c1, color):
    """Blend ``color`` into the box [r0, r1) x [c0, c1) with sub-pixel coverage."""
    color = np.asarray(color, dtype=np.float64)
    idx = np.arange(IMG)
    cov_r = np.clip(np.minimum(idx + 1, r1) - np.maximum(idx, r0), 0.0, 1.0)
    cov_c = np.clip(np.minimum(idx + 1, c1) - np.maximum(idx, c0), 0.0, 1.0)
    cov = np.outer(cov_r, cov_c)[:, :, None]
    img[:] = img * (1.0 - cov) + color * cov


def render_image(s: Scenario) -> np.ndarray:
    img = np.full((IMG, IMG, 3), BACKGROUND)
    rows = np.arange(IMG)[:, None] + 0.5
    cols = np.arange(IMG)[None, :] + 0.5
    road = (rows > HORIZON_ROW) & (np.abs(cols - 32.0) <= 2.0 * (rows - HORIZON_ROW))
    img[road] = ROAD
    dash_rows = [r for r in range(26, IMG) if ((r - 26) // 3) % 2 == 0]
    img[np.ix_(dash_rows, [31, 32])] = 1.0
    if s.turn_sign:
        _fill_box(img, BAND_BOTTOM - s.radius / 2.0, BAND_BOTTOM, 0, IMG, (BAND,) * 3)
    if s.d_stop is not None and s.maneuver != "STOP_AND_GO":
        r = ground_row(s.d_stop)
        half = 2.0 * (r - HORIZON_ROW)
        _fill_box(img, r - 0.5, r + 0.5, 32.0 - half, 32.0 + half, (1.0, 1.0, 1.0))
    for ob in s.obstacles:
        d = ob.cx - ob.length / 2
        bottom = ground_row(d)
        h, w = GROUND_K / d, FOCAL * ob.width / d
        col = 32.0 - FOCAL * ob.cy / d
        _fill_box(img, bottom - h, bottom, col - w / 2, col + w / 2, BLUE)
    if s.light in ("RED", "GREEN"):
        r0, r1, c0, c1 = LIGHT_BOX
        img[r0:r1, c0:c1] = RED if s.light == "RED" else GREEN
    if s.stop_sign:
        r0, r1, c0, c1 = SIGN_BOX
        img[r0:r1, c0:c1] = RED
    return np.clip(img, 0.0, 1.0)


# ------------------------------------------------------------------ episodes


def nav_text_for(s: Scenario, phrasing: str = "default") -> str:
    """Navigation command. A red-light stop is navigated as a straight route:
    whether to stop is left to the camera."""
    key = "STRAIGHT" if s.maneuver == "STOP" and s.light == "RED" else s.maneuver
    return NAV_TEMPLATES[phrasing][key]


def rationale_for(s: Scenario) -> str:
    if s.maneuver == "STRAIGHT":
        return RATIONALES[("STRAIGHT", "GREEN" if s.light == "GREEN" else "NONE")]
    if s.maneuver == "STOP":
        return RATIONALES[("STOP", "RED" if s.light == "RED" else "SIGN")]
    return RATIONALES[(s.maneuver, None)]


@dataclass
class Episode:
    seed: int
    maneuver: str
    image: np.ndarray
    ego_history: np.ndarray
    nav_text: str
    prompt_text: str
    gt_traj: np.ndarray  # [10, 6]
    gt_text: str
    scenario: Scenario | None = None


def episode_from_scenario(s: Scenario, phrasing: str = "default") -> Episode:
    hist, traj = rollout_gt(s)
    return Episode(s.seed, s.maneuver, render_image(s), hist, nav_text_for(s, phrasing), PROMPT, traj,
                   rationale_for(s), s)


def make_episode(seed: int, phrasing: str = "default") -> Episode:
    return episode_from_scenario(sample_scenario(seed), phrasing)


def episode_seeds(dataset_seed: int, n: int) -> list[int]:
    """Per-episode seeds ``base + i`` where ``base`` hashes the dataset seed.

    Hashing keeps datasets with nearby seeds from sharing episodes.
    """
    base = derive_seed(dataset_seed)
    return [(base + i) & MASK64 for i in range(n)]


def make_dataset(n: int, seed: int, phrasing: str = "default") -> list[Episode]:
    return [make_episode(s, phrasing) for s in episode_seeds(seed, n)]
