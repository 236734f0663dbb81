"""Behavioural probes for a trained driving policy.

Each probe returns ``(hits, trials)`` so callers can apply their own pass rate.
A predictor is anything with ``predict_batch(episodes, with_text=...)``.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .scenario import NAV_TEMPLATES, Episode, episode_from_scenario, with_light

LEFT_TEXT = NAV_TEMPLATES["default"]["LEFT"]
RIGHT_TEXT = NAV_TEMPLATES["default"]["RIGHT"]
TURNS = {"LEFT": 1.0, "RIGHT": -1.0}  # sign of y at the last waypoint (y points left)


def _final_lateral(predictor, episodes) -> np.ndarray:
    preds = predictor.predict_batch(episodes, with_text=False)
    return np.array([np.asarray(t).reshape(-1, 6)[-1, 1] for t, _ in preds])


def _final_speed(predictor, episodes) -> np.ndarray:
    preds = predictor.predict_batch(episodes, with_text=False)
    return np.array([float(np.hypot(*np.asarray(t).reshape(-1, 6)[-1, 2:4])) for t, _ in preds])


def turn_sign_probe(predictor, episodes) -> tuple[int, int]:
    """Turn episodes whose final lateral offset has the commanded sign."""
    turns = [e for e in episodes if e.maneuver in TURNS]
    if not turns:
        return 0, 0
    y = _final_lateral(predictor, turns)
    hits = sum(int(np.sign(yi) == TURNS[e.maneuver]) for yi, e in zip(y, turns))
    return hits, len(turns)


def swap_turn_text(e: Episode) -> Episode:
    swapped = {LEFT_TEXT: RIGHT_TEXT, RIGHT_TEXT: LEFT_TEXT}
    if e.nav_text not in swapped:
        raise ValueError(f"episode {e.seed} has no turn command to swap")
    return replace(e, nav_text=swapped[e.nav_text])


def nav_swap_probe(predictor, episodes) -> tuple[int, int]:
    """Turn episodes whose predicted lateral sign flips when left/right text is swapped."""
    turns = [e for e in episodes if e.nav_text in (LEFT_TEXT, RIGHT_TEXT)]
    if not turns:
        return 0, 0
    y0 = _final_lateral(predictor, turns)
    y1 = _final_lateral(predictor, [swap_turn_text(e) for e in turns])
    hits = int(np.sum((np.sign(y0) != np.sign(y1)) & (y0 != 0) & (y1 != 0)))
    return hits, len(turns)


def light_pairs(episodes) -> list[tuple[Episode, Episode]]:
    """(RED, GREEN) episode pairs sharing all geometry, built from every signalised episode."""
    pairs = []
    for e in episodes:
        s = e.scenario
        if s.maneuver in ("STRAIGHT", "STOP") and s.light in ("RED", "GREEN"):
            pairs.append((episode_from_scenario(with_light(s, "RED")),
                          episode_from_scenario(with_light(s, "GREEN"))))
    return pairs


def light_probe(predictor, episodes, red_max: float = 2.0, green_min: float = 3.0) -> tuple[int, int]:
    """Pairs where the final speed is below ``red_max`` on RED and above ``green_min`` on GREEN."""
    pairs = light_pairs(episodes)
    if not pairs:
        return 0, 0
    red = _final_speed(predictor, [r for r, _ in pairs])
    green = _final_speed(predictor, [g for _, g in pairs])
    return int(np.sum((red < red_max) & (green > green_min))), len(pairs)
