"""Open-loop trajectory metrics and the composite driving score.

composite = no_collision * drivable_area * (0.5 * progress + 0.5 * comfort)
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import ShapeError
from .scenario import DT, HORIZON, MANEUVERS, TIMES, VEHICLE_LENGTH, VEHICLE_WIDTH, Episode, Scenario, route_offset

CORRIDOR = 2.5
MAX_ACCEL = 4.0
MAX_JERK = 10.0
MIN_GT_PROGRESS = 0.5
EGO_LENGTH = VEHICLE_LENGTH
EGO_WIDTH = VEHICLE_WIDTH
SCORE_FIELDS = ("ade", "fde", "no_collision", "drivable_area", "progress", "comfort", "composite")


def _as_traj(traj) -> np.ndarray:
    arr = np.asarray(traj, dtype=np.float64)
    if arr.ndim == 1:
        if arr.size % 6:
            raise ShapeError(f"trajectory of {arr.size} values is not a multiple of 6")
        arr = arr.reshape(-1, 6)
    return arr


def ade_fde(pred, gt) -> tuple[float, float]:
    """Mean and final Euclidean position error between two trajectories."""
    p, g = _as_traj(pred), _as_traj(gt)
    if p.shape[0] != HORIZON or g.shape[0] != HORIZON:
        raise ShapeError(f"trajectories must have {HORIZON} waypoints, got {p.shape[0]} and {g.shape[0]}")
    err = np.hypot(p[:, 0] - g[:, 0], p[:, 1] - g[:, 1])
    return float(err.mean()), float(err[-1])


def path_length(traj) -> float:
    """Polyline length from the ego origin through every waypoint."""
    pts = np.vstack([[0.0, 0.0], _as_traj(traj)[:, :2]])
    return float(np.hypot(*np.diff(pts, axis=0).T).sum())


def waypoint_headings(traj) -> np.ndarray:
    """Heading of the segment to the next waypoint; the last reuses the previous.

    Zero-length segments (a stopped vehicle) keep the previous heading, starting from 0.
    """
    pts = _as_traj(traj)[:, :2]
    headings = np.zeros(len(pts))
    last = 0.0
    for i in range(len(pts)):
        if i + 1 < len(pts):
            dx, dy = pts[i + 1] - pts[i]
            if math.hypot(dx, dy) > 1e-9:
                last = math.atan2(dy, dx)
        headings[i] = last
    return headings


def box_corners(cx, cy, heading, length, width) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def boxes_overlap(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test for two convex quadrilaterals; touching is not overlap."""
    for poly in (a, b):
        for i in range(4):
            edge = poly[(i + 1) % 4] - poly[i]
            axis = np.array([-edge[1], edge[0]])
            pa, pb = a @ axis, b @ axis
            if min(pa.max(), pb.max()) - max(pa.min(), pb.min()) <= 0:
                return False
    return True


def collides(traj, scenario: Scenario) -> bool:
    pts = _as_traj(traj)
    heads = waypoint_headings(pts)
    for i, t in enumerate(TIMES):
        ego = box_corners(pts[i, 0], pts[i, 1], heads[i], EGO_LENGTH, EGO_WIDTH)
        for ob in scenario.obstacles:
            ox, oy = ob.center_at(float(t))
            if boxes_overlap(ego, box_corners(ox, oy, 0.0, ob.length, ob.width)):
                return True
    return False


def is_comfortable(traj) -> bool:
    acc = _as_traj(traj)[:, 4:6]
    if np.hypot(acc[:, 0], acc[:, 1]).max() > MAX_ACCEL:
        return False
    jerk = np.hypot(*np.diff(acc, axis=0).T) / DT
    return bool(jerk.max() <= MAX_JERK)


@dataclass
class EpisodeScore:
    ade: float
    fde: float
    no_collision: int
    drivable_area: int
    progress: float
    comfort: int
    composite: float
    seed: int | None = None
    maneuver: str | None = None


def score_episode(pred, episode: Episode) -> EpisodeScore:
    s = episode.scenario
    p = _as_traj(pred)
    ade, fde = ade_fde(p, episode.gt_traj)
    no_collision = 0 if collides(p, s) else 1
    drivable = int(all(route_offset(s, x, y) <= CORRIDOR for x, y in p[:, :2]))
    s_gt = path_length(episode.gt_traj)
    progress = 1.0 if s_gt < MIN_GT_PROGRESS else float(np.clip(path_length(p) / s_gt, 0.0, 1.0))
    comfort = int(is_comfortable(p))
    composite = no_collision * drivable * (0.5 * progress + 0.5 * comfort)
    return EpisodeScore(ade, fde, no_collision, drivable, progress, comfort, composite, episode.seed, episode.maneuver)


@dataclass
class EvalReport:
    episodes: list[EpisodeScore]
    checkpoint_id: str = ""
    dataset_id: str = ""
    means: dict = field(default_factory=dict)
    per_maneuver: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.means:
            self.means = _means(self.episodes)
        if not self.per_maneuver:
            for m in MANEUVERS:
                group = [e for e in self.episodes if e.maneuver == m]
                if group:
                    self.per_maneuver[m] = dict(_means(group), count=len(group))

    @property
    def mean_composite(self) -> float:
        return self.means["composite"]

    def to_dict(self) -> dict:
        return {
            "mean_composite": self.means["composite"],
            "mean_ade": self.means["ade"],
            "mean_fde": self.means["fde"],
            "means": self.means,
            "per_maneuver": self.per_maneuver,
            "episodes": [asdict(e) for e in self.episodes],
            "checkpoint_id": self.checkpoint_id,
            "dataset_id": self.dataset_id,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _means(scores: list[EpisodeScore]) -> dict:
    if not scores:
        return {k: 0.0 for k in SCORE_FIELDS}
    return {k: sum(float(getattr(s, k)) for s in scores) / len(scores) for k in SCORE_FIELDS}


class GroundTruthReplay:
    """Predictor stub that returns each episode's own ground truth."""

    def predict_batch(self, episodes, with_text: bool = True):
        return [(np.asarray(e.gt_traj).reshape(HORIZON, 6), e.gt_text if with_text else "") for e in episodes]


class ConstantVelocityBaseline:
    """Extrapolates the last history velocity with zero acceleration."""

    def predict_batch(self, episodes, with_text: bool = False):
        out = []
        for e in episodes:
            hist = np.asarray(e.ego_history).reshape(4, 8)
            vx, vy = hist[-1, 4], hist[-1, 5]
            traj = np.zeros((HORIZON, 6))
            traj[:, 0], traj[:, 1] = vx * TIMES, vy * TIMES
            traj[:, 2], traj[:, 3] = vx, vy
            out.append((traj, ""))
        return out


class ZeroBaseline:
    """Predicts the all-zero trajectory (stay at the origin)."""

    def predict_batch(self, episodes, with_text: bool = False):
        return [(np.zeros((HORIZON, 6)), "") for _ in episodes]


def evaluate_dataset(predictor, episodes, checkpoint_id: str = "", dataset_id: str = "",
                     batch_size: int = 16, with_text: bool = True) -> EvalReport:
    """Predict and score every episode, aggregating in dataset order."""
    episodes = list(episodes)
    if not episodes:
        raise ValueError("evaluate_dataset needs at least one episode")
    scores = []
    for i in range(0, len(episodes), batch_size):
        chunk = episodes[i : i + batch_size]
        for ep, (traj, _) in zip(chunk, predictor.predict_batch(chunk, with_text=with_text)):
            scores.append(score_episode(traj, ep))
    return EvalReport(scores, checkpoint_id, dataset_id)
