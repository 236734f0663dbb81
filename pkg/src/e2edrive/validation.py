"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .encoders import validate_ego, validate_image
from .numerics import ShapeError

EPISODE_FIELDS = ("image", "ego_history", "nav_text", "prompt_text")
TARGET_FIELDS = ("gt_traj", "gt_text")


def check_episodes(X, require_targets: bool = False) -> list:
    """Return ``X`` as a non-empty list of episode-like objects, or raise.

    Each item needs the model inputs; with ``require_targets`` also the
    ground-truth trajectory and rationale.
    """
    if isinstance(X, (str, bytes)) or not isinstance(X, (Sequence, np.ndarray)):
        raise TypeError(f"expected a sequence of episodes, got {type(X).__name__}")
    items = list(X)
    if not items:
        raise ValueError("expected at least one episode")
    needed = EPISODE_FIELDS + (TARGET_FIELDS if require_targets else ())
    for i, e in enumerate(items):
        missing = [f for f in needed if not hasattr(e, f)]
        if missing:
            raise TypeError(f"item {i} lacks {', '.join(missing)}")
        validate_image(e.image)
        validate_ego(e.ego_history)
        if not isinstance(e.nav_text, str) or not isinstance(e.prompt_text, str):
            raise TypeError(f"item {i}: nav_text and prompt_text must be strings")
        if require_targets:
            check_trajectory(e.gt_traj)
    return items


def check_trajectory(traj) -> np.ndarray:
    """A finite ``[10, 6]`` float array (a flat 60-vector is reshaped)."""
    arr = np.asarray(traj, dtype=np.float64)
    if arr.size != 60:
        raise ShapeError(f"trajectory must hold 60 values, got {arr.size}")
    arr = arr.reshape(10, 6)
    if not np.all(np.isfinite(arr)):
        raise ValueError("trajectory contains non-finite values")
    return arr
