import math
from collections import Counter

import numpy as np
import pytest

from e2edrive.scenario import (LIGHT_BOX, MANEUVERS, NAV_TEMPLATES, PROMPT, RATIONALES, Scenario, episode_from_scenario,
                               episode_seeds, kinematic_violation, make_dataset, make_episode, render_image,
                               rollout_gt, route_offset, sample_scenario, state_at, with_light)


def test_straight_closed_form():
    _, traj = rollout_gt(Scenario(0, "STRAIGHT", 10.0))
    i = np.arange(1, 11)
    np.testing.assert_allclose(traj[:, 0], 5.0 * i, rtol=0, atol=1e-12)
    assert not traj[:, 1].any() and not traj[:, 3:].any()
    assert (traj[:, 2] == 10.0).all()


def test_left_turn_first_waypoint():
    s = Scenario(0, "LEFT", 5.0, radius=10.0)
    assert s.v_turn == 5.0
    x, y, *_ = state_at(s, 0.5)
    assert (x, y) == pytest.approx((10 * math.sin(0.25), 10 * (1 - math.cos(0.25))), abs=1e-12)
    assert (round(x, 3), round(y, 3)) == (2.474, 0.311)


def test_right_turn_mirrors_left():
    left = rollout_gt(Scenario(0, "LEFT", 9.0, radius=12.0))[1]
    right = rollout_gt(Scenario(0, "RIGHT", 9.0, radius=12.0))[1]
    np.testing.assert_array_equal(left[:, [0, 2, 4]], right[:, [0, 2, 4]])
    np.testing.assert_array_equal(left[:, [1, 3, 5]], -right[:, [1, 3, 5]])


def test_turn_speed_cap():
    s = Scenario(0, "LEFT", 15.0, radius=8.0)
    assert s.v_turn == pytest.approx(math.sqrt(24.0))
    _, traj = rollout_gt(s)
    assert np.hypot(traj[:, 4], traj[:, 5]).max() <= 3.0 + 1e-12


def test_stop_closed_form():
    s = Scenario(0, "STOP", 10.0, d_stop=25.0, light="RED")
    _, traj = rollout_gt(s)
    assert traj[0, 4] == -2.0
    assert traj[-1, 0] == pytest.approx(25.0, abs=1e-12) and traj[-1, 2] == pytest.approx(0.0, abs=1e-12)


def test_sampling_is_deterministic():
    assert sample_scenario(123) == sample_scenario(123)
    assert make_episode(5).gt_text == make_episode(5).gt_text


def test_maneuver_frequencies():
    counts = Counter(sample_scenario(s).maneuver for s in range(10_000))
    for m in MANEUVERS:
        assert abs(counts[m] / 10_000 - 0.2) <= 0.02


def test_sampled_constraints():
    for seed in range(2000):
        s = sample_scenario(seed)
        if s.turn_sign:
            assert s.v_turn ** 2 <= 3.0 * s.radius + 1e-9
            assert s.light in ("GREEN", "NONE")
        elif s.maneuver == "STOP":
            assert s.light == "RED" or s.stop_sign
            assert s.stop_time <= 4.5 + 1e-9
        elif s.maneuver == "STRAIGHT":
            assert s.light in ("GREEN", "NONE")


def test_ground_truth_is_kinematically_consistent():
    worst = max(kinematic_violation(rollout_gt(sample_scenario(s))[1]) for s in range(500))
    assert worst <= 0.25


def test_history_ends_at_origin():
    hist = make_episode(7).ego_history.reshape(4, 8)
    assert hist[-1, 0] == 0.0 and hist[-1, 1] == 0.0 and hist[-1, 2] == 1.0


def test_render_light_locality():
    base = next(sample_scenario(s) for s in range(100) if sample_scenario(s).light == "GREEN"
                and sample_scenario(s).maneuver == "STRAIGHT")
    red, green = render_image(with_light(base, "RED")), render_image(with_light(base, "GREEN"))
    r0, r1, c0, c1 = LIGHT_BOX
    diff = np.any(red != green, axis=-1)
    assert diff[r0:r1, c0:c1].all()
    diff[r0:r1, c0:c1] = False
    assert not diff.any()


def test_render_no_light_shows_background():
    s = Scenario(0, "STRAIGHT", 10.0)
    img = render_image(s)
    r0, r1, c0, c1 = LIGHT_BOX
    np.testing.assert_array_equal(img[r0:r1, c0:c1], 0.1)
    np.testing.assert_array_equal(img, render_image(s))
    assert img.shape == (64, 64, 3) and img.min() >= 0 and img.max() <= 1


def test_turn_band_hides_direction():
    left = render_image(Scenario(0, "LEFT", 8.0, radius=12.0))
    right = render_image(Scenario(0, "RIGHT", 8.0, radius=12.0))
    np.testing.assert_array_equal(left, right)
    assert not np.array_equal(left, render_image(Scenario(0, "LEFT", 8.0, radius=18.0)))


def test_texts():
    assert NAV_TEMPLATES["default"]["STRAIGHT"] == "go straight for 50 meters"
    assert make_episode(1).prompt_text == PROMPT == "please generate a safe trajectory for next 5 seconds"
    assert all(len(t.encode()) <= 32 for t in RATIONALES.values())
    left = next(make_episode(s) for s in range(50) if sample_scenario(s).maneuver == "LEFT")
    assert left.nav_text == "turn left now"
    assert episode_from_scenario(left.scenario, "rephrased").nav_text == "make a left turn here"


def test_red_light_is_only_in_the_image():
    s = Scenario(0, "STOP", 10.0, d_stop=20.0, light="GREEN")
    red, green = episode_from_scenario(with_light(s, "RED")), episode_from_scenario(with_light(s, "GREEN"))
    assert red.nav_text == green.nav_text == "go straight for 50 meters"
    assert red.maneuver == "STOP" and green.maneuver == "STRAIGHT"
    assert red.gt_traj[-1, 2] == pytest.approx(0.0, abs=1e-12) and green.gt_traj[-1, 2] == 10.0


def test_route_offsets():
    straight = Scenario(0, "STRAIGHT", 10.0)
    assert route_offset(straight, 30.0, -1.5) == 1.5
    left = Scenario(0, "LEFT", 5.0, radius=10.0)
    assert route_offset(left, 10 * math.sin(1.0), 10 * (1 - math.cos(1.0))) == pytest.approx(0.0, abs=1e-12)
    assert route_offset(left, 10.0, 25.0) == pytest.approx(0.0)
    assert route_offset(left, 25.0, 0.0) > 2.5


def test_dataset_seeds():
    seeds = episode_seeds(3, 4)
    assert seeds[1] - seeds[0] == 1
    assert [e.seed for e in make_dataset(4, 3)] == seeds
