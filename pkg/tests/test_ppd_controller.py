"""Waypoint tracking, potential shaping, and replanning around blockages."""

import numpy as np
import pytest

from ppdnav.graph_planner import PathPlan, Unreachable, build_graph
from ppdnav.numerics import TwoHeadNet
from ppdnav.ppd_controller import (
    PPDConfig,
    PlannedNavTask,
    ShapingPotential,
    WaypointTracker,
    act,
    maybe_replan,
    observed_obstacles,
    plan_initial,
    shaped_reward,
)
from ppdnav.warehouse_env import Action, EnvConfig, WarehouseEnv, load_map

CORRIDOR = "S...G\n#####\n"

TWO_ROWS = """\
S...G
.....
"""

TWO_GOALS = "S.G.G\n#####\n"


def test_plan_initial_targets_nearest_goal():
    wmap = load_map(TWO_GOALS)
    tracker = plan_initial(wmap, (0, 0), [(2, 0), (4, 0)])
    assert tracker.goal == (2, 0)
    assert tracker.plan.cells == [(0, 0), (1, 0), (2, 0)]
    assert tracker.cursor == 1
    assert tracker.blocked_ticks == 0


def test_plan_initial_on_goal_pins_cursor():
    wmap = load_map(CORRIDOR)
    tracker = plan_initial(wmap, (4, 0), [(4, 0)])
    assert len(tracker.plan) == 1
    assert tracker.cursor == 0
    assert tracker.target_cell() == (4, 0)


def test_advance_moves_past_reached_cell():
    plan = PathPlan([(0, 0), (1, 0), (2, 0), (3, 0)], 3.0)
    tracker = WaypointTracker(plan, 1)
    tracker.advance((0, 0))          # still on the start cell
    assert tracker.cursor == 1
    tracker.advance((1, 0))          # reached the cursor cell
    assert tracker.cursor == 2
    tracker.advance((3, 0))          # skipped ahead two cells
    assert tracker.cursor == 3       # pinned at the final index
    tracker.advance((0, 0))          # never regresses
    assert tracker.cursor == 3


def test_advance_breaks_proximity_ties_forward():
    plan = PathPlan([(0, 0), (1, 0), (2, 0), (2, 1), (2, 2)], 4.0)
    tracker = WaypointTracker(plan, 1)
    # (1,1) is one step from both cells 1 and 3; the later one wins, so a
    # robot dodging a lane off its route keeps getting pulled forward
    tracker.advance((1, 1))
    assert tracker.cursor == 4


def test_target_cell_looks_ahead_and_clamps():
    plan = PathPlan([(0, 0), (1, 0), (2, 0), (3, 0), (4, 0)], 4.0)
    assert WaypointTracker(plan, 1, lookahead=2).target_cell() == (2, 0)
    assert WaypointTracker(plan, 1, lookahead=1).target_cell() == (1, 0)
    assert WaypointTracker(plan, 3, lookahead=4).target_cell() == (4, 0)
    assert WaypointTracker(plan, 1).next_cell() == (1, 0)


def test_potential_is_zero_at_goal_and_scales_with_distance():
    wmap = load_map(CORRIDOR)
    pot = ShapingPotential.from_map(wmap, (4, 0), weight=0.05)
    assert pot.phi((4, 0)) == 0.0
    for x in range(5):
        assert pot.phi((x, 0)) == pytest.approx(-0.05 * (4 - x), abs=1e-15)
    with pytest.raises(Unreachable):
        ShapingPotential.from_map(wmap, (1, 1), weight=0.05)  # shelf cell


def test_shaped_reward_hand_value():
    wmap = load_map(CORRIDOR)
    pot = ShapingPotential.from_map(wmap, (4, 0), weight=0.05)
    # base 1.0, phi(s)=-0.15, phi(s')=-0.10, gamma 0.9:
    # 1.0 + 0.9*(-0.10) - (-0.15) = 1.06
    got = shaped_reward(1.0, (1, 0), (2, 0), pot, 0.9)
    assert got == pytest.approx(1.06, abs=1e-12)


def test_shaping_telescopes_at_gamma_one():
    wmap = load_map(TWO_ROWS)
    pot = ShapingPotential.from_map(wmap, (4, 0), weight=0.05)
    rng = np.random.default_rng(3)
    cells = [(0, 0)]
    for _ in range(30):
        x, y = cells[-1]
        steps = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1), (x, y)]
        free = [c for c in steps if wmap.is_free(c)]
        cells.append(free[rng.integers(len(free))])
    base = rng.normal(size=len(cells) - 1)
    shaped = [shaped_reward(base[i], cells[i], cells[i + 1], pot, 1.0)
              for i in range(len(base))]
    assert sum(shaped) - sum(base) == pytest.approx(
        pot.phi(cells[-1]) - pot.phi(cells[0]), abs=1e-12)


def test_replan_waits_out_threshold_then_routes_around():
    wmap = load_map(TWO_ROWS)
    tracker = plan_initial(wmap, (0, 0), [(4, 0)])
    blocked_cell = tracker.next_cell()
    for tick in range(1, 3):
        tracker, replanned = maybe_replan(tracker, wmap, (0, 0), [blocked_cell],
                                          threshold=2)
        assert not replanned
        assert tracker.blocked_ticks == tick
    tracker, replanned = maybe_replan(tracker, wmap, (0, 0), [blocked_cell],
                                      threshold=2)
    assert replanned
    assert blocked_cell not in tracker.plan.cells
    assert tracker.plan.cells[0] == (0, 0)
    assert tracker.goal == (4, 0)
    assert tracker.cursor == 1
    assert tracker.blocked_ticks == 0


def test_replan_counter_resets_when_cell_clears():
    wmap = load_map(TWO_ROWS)
    tracker = plan_initial(wmap, (0, 0), [(4, 0)])
    cell = tracker.next_cell()
    tracker, _ = maybe_replan(tracker, wmap, (0, 0), [cell], threshold=3)
    tracker, _ = maybe_replan(tracker, wmap, (0, 0), [cell], threshold=3)
    assert tracker.blocked_ticks == 2
    tracker, replanned = maybe_replan(tracker, wmap, (0, 0), [], threshold=3)
    assert not replanned
    assert tracker.blocked_ticks == 0


def test_replan_with_no_detour_keeps_plan():
    wmap = load_map(CORRIDOR)  # one-lane corridor: nothing to route around
    tracker = plan_initial(wmap, (0, 0), [(4, 0)])
    original = tracker.plan.cells
    for _ in range(5):
        tracker, replanned = maybe_replan(tracker, wmap, (0, 0), [(1, 0)],
                                          threshold=1)
        assert not replanned
    assert tracker.plan.cells == original
    assert tracker.blocked_ticks == 5  # keeps counting for later attempts


def test_observed_obstacles_limited_to_window():
    text = "S....O...G\n..........\n\nobstacle 0: loop=(5,0) period=1 phase=0\n"
    env = WarehouseEnv(load_map(text), EnvConfig(phase_jitter=False))
    env.reset(0)
    assert observed_obstacles(env) == []   # distance 5 > window radius 2
    for _ in range(3):
        env.step(Action.RIGHT)
    assert observed_obstacles(env) == [(5, 0)]


def test_act_plays_argmax_without_rng():
    wmap = load_map(CORRIDOR)
    env = WarehouseEnv(wmap, EnvConfig(phase_jitter=False))
    env.reset(0)
    net = TwoHeadNet(env.obs_dim, len(Action), hidden=(4,),
                     rng=np.random.default_rng(0))
    for w in net.policy_head.weights:
        w[:] = 0.0
    tracker = plan_initial(wmap, (0, 0), [(4, 0)])
    assert act(env, net, tracker) == Action.UP  # all-equal logits: lowest index
    rng1 = np.random.default_rng(11)
    rng2 = np.random.default_rng(11)
    assert act(env, net, tracker, rng1) == act(env, net, tracker, rng2)


def test_task_rebuilds_plan_after_each_pick():
    wmap = load_map(TWO_GOALS)
    task = PlannedNavTask(WarehouseEnv(wmap, EnvConfig(phase_jitter=False)))
    obs = task.reset(0)
    assert obs.shape == (task.obs_dim,)
    assert task.tracker.goal == (2, 0)
    task.step(Action.RIGHT)
    task.step(Action.RIGHT)
    obs, reward, done, info = task.step(Action.PICK)
    assert not done
    assert info["replanned"]
    assert task.tracker.goal == (4, 0)  # re-aimed at the remaining goal
    assert task.potential.goal == (4, 0)
    obs, reward, done, info = task.step(Action.RIGHT)
    assert info["cursor"] == task.tracker.cursor
    assert info["path_length"] == 3


def test_task_rewards_carry_the_shaping_term():
    wmap = load_map(CORRIDOR)
    task = PlannedNavTask(WarehouseEnv(wmap, EnvConfig(phase_jitter=False)),
                          gamma=0.99)
    task.reset(0)
    pot = task.potential
    expect = shaped_reward(-0.01, (0, 0), (1, 0), pot, 0.99)
    _, reward, _, _ = task.step(Action.RIGHT)
    assert reward == pytest.approx(expect, abs=1e-15)
    # moving toward the goal beats the unshaped step cost
    assert reward > -0.01


def test_task_waypoint_feeds_the_observation():
    wmap = load_map(CORRIDOR)
    task = PlannedNavTask(WarehouseEnv(wmap, EnvConfig(phase_jitter=False)))
    obs = task.reset(0)
    plain = task.env.observe().vector()
    assert obs[-2] > 0.0                 # waypoint delta points down the plan
    assert np.array_equal(obs[:-2], plain[:-2])


def test_config_validation():
    with pytest.raises(ValueError):
        PPDConfig(lookahead=0)
    with pytest.raises(ValueError):
        PPDConfig(block_threshold=-1)
    assert PPDConfig(lookahead=1, block_threshold=0).lookahead == 1
