"""Map parsing, step dynamics, observations, and snapshot determinism."""

import numpy as np
import pytest

from ppdnav.warehouse_env import (
    Action,
    EnvConfig,
    EpisodeFinished,
    InvalidMap,
    Outcome,
    ParseError,
    RewardConfig,
    WarehouseEnv,
    load_map,
    with_extra_shelves,
)

TWO_PATROLS = """\
S.....G
.#.#.#.
.O...O.

obstacle 0: loop=(1,2)(2,2)(1,2)(0,2) period=1 phase=0
obstacle 1: loop=(5,2)(6,2)(5,2)(4,2) period=2 phase=1
"""

OPEN_4X3 = "S..G\n....\n....\n"

TWIN_GOALS = "G..S..G\n#######\n"

STILL = EnvConfig(phase_jitter=False)


def test_load_map_reads_grid_and_specs():
    wmap = load_map(TWO_PATROLS, name="twin")
    assert (wmap.width, wmap.height) == (7, 3)
    assert wmap.name == "twin"
    assert wmap.start == (0, 0)
    assert wmap.goals == [(6, 0)]
    assert not wmap.is_free((1, 1))
    assert wmap.is_free((1, 2))  # anchor glyph cells stay walkable
    spec0, spec1 = wmap.obstacle_specs
    assert spec0.waypoint_loop == ((1, 2), (2, 2), (1, 2), (0, 2))
    assert (spec0.period, spec0.phase) == (1, 0)
    assert (spec1.period, spec1.phase) == (2, 1)


def test_parse_rejects_syntax_errors():
    with pytest.raises(ParseError):
        load_map("S.x.G\n#####\n")  # unknown glyph
    with pytest.raises(ParseError):
        load_map("S..G\n###\n")  # ragged rows
    with pytest.raises(ParseError):
        load_map("")  # no grid at all
    grid = "SO.G\n....\n"
    with pytest.raises(ParseError):
        load_map(grid + "\nobstacle 0: loop=(1,0) period=1\n")  # missing phase
    with pytest.raises(ParseError):
        load_map(grid + "\nobstacle 0: loop=(1,0) period=1 phase=0\n"
                 "obstacle 0: loop=(1,0) period=1 phase=0\n")
    with pytest.raises(ParseError):
        load_map("S..G\n\nobstacle 0: loop=(1,0) period=1 phase=0\n....\n")


def test_invalid_map_semantics():
    with pytest.raises(InvalidMap):
        load_map("S.SG\n....\n")  # two starts
    with pytest.raises(InvalidMap):
        load_map("...G\n....\n")  # no start
    with pytest.raises(InvalidMap):
        load_map("S...\n....\n")  # no goal
    with pytest.raises(InvalidMap):
        load_map("SO.G\n....\n")  # anchor without a spec line
    with pytest.raises(InvalidMap):
        load_map("S..G\n....\n\nobstacle 0: loop=(1,0) period=1 phase=0\n")
    with pytest.raises(InvalidMap):  # anchor not on its loop
        load_map("SO.G\n....\n\nobstacle 0: loop=(2,0)(3,0) period=1 phase=0\n")
    with pytest.raises(InvalidMap):  # phase outside the loop
        load_map("SO.G\n....\n\nobstacle 0: loop=(1,0)(1,1) period=1 phase=2\n")
    with pytest.raises(InvalidMap):  # zero period
        load_map("SO.G\n....\n\nobstacle 0: loop=(1,0)(1,1) period=0 phase=0\n")
    with pytest.raises(InvalidMap):  # waypoints not 4-adjacent
        load_map("SO.G\n....\n\nobstacle 0: loop=(1,0)(2,1) period=1 phase=0\n")
    with pytest.raises(InvalidMap):  # waypoint under a shelf
        load_map("SO#G\n....\n\nobstacle 0: loop=(1,0)(2,0) period=1 phase=0\n")
    with pytest.raises(InvalidMap):
        load_map("SG\n")  # below minimum size


def test_step_budget_formula():
    env = WarehouseEnv(load_map(OPEN_4X3))
    assert env.step_budget == 4 * (4 + 3) * 1
    env = WarehouseEnv(load_map(TWIN_GOALS), EnvConfig(budget_factor=2))
    assert env.step_budget == 2 * (7 + 2) * 2


def test_move_wait_and_wall_rewards():
    env = WarehouseEnv(load_map(OPEN_4X3), STILL)
    env.reset(0)
    t = env.step(Action.RIGHT)
    assert t.reward == pytest.approx(-0.01)
    assert env.robot_position == (1, 0)
    assert env.path_length == 1
    t = env.step(Action.WAIT)
    assert t.reward == pytest.approx(-0.01)
    assert env.path_length == 1
    t = env.step(Action.UP)  # off the grid
    assert t.reward == pytest.approx(-0.11)
    assert env.robot_position == (1, 0)
    assert env.path_length == 1


def test_pick_rewards_and_success():
    env = WarehouseEnv(load_map(OPEN_4X3), STILL)
    env.reset(0)
    t = env.step(Action.PICK)  # not on a goal
    assert t.reward == pytest.approx(-0.21)
    assert env.picks_declared == 1
    assert env.correct_picks == 0
    for _ in range(3):
        env.step(Action.RIGHT)
    t = env.step(Action.PICK)
    assert t.reward == pytest.approx(0.99)
    assert t.outcome == Outcome.SUCCESS
    assert t.done
    assert env.correct_picks == 1


def test_repicking_a_goal_is_a_false_pick():
    env = WarehouseEnv(load_map(TWIN_GOALS), STILL)
    env.reset(0)
    for _ in range(3):
        env.step(Action.RIGHT)
    t = env.step(Action.PICK)
    assert t.reward == pytest.approx(0.99)
    assert not t.done  # one goal left
    t = env.step(Action.PICK)  # same cell again
    assert t.reward == pytest.approx(-0.21)
    assert env.picks_declared == 2
    assert env.correct_picks == 1


def test_driving_into_obstacle_collides():
    text = "S.OG\n....\n\nobstacle 0: loop=(2,0) period=1 phase=0\n"
    env = WarehouseEnv(load_map(text), STILL)
    env.reset(0)
    env.step(Action.RIGHT)
    t = env.step(Action.RIGHT)  # into the parked obstacle
    assert t.outcome == Outcome.COLLISION
    assert t.done
    assert t.reward == pytest.approx(-1.01)


def test_obstacle_stepping_onto_robot_collides():
    text = "SO.G\n....\n\nobstacle 0: loop=(1,0)(0,0) period=1 phase=0\n"
    env = WarehouseEnv(load_map(text), STILL)
    env.reset(0)
    t = env.step(Action.WAIT)  # obstacle advances onto the start cell
    assert t.outcome == Outcome.COLLISION
    assert t.reward == pytest.approx(-1.01)


def test_timeout_consumes_exact_budget():
    env = WarehouseEnv(load_map("SG\n..\n"), STILL)
    env.reset(0)
    for i in range(env.step_budget):
        t = env.step(Action.WAIT)
        assert t.done == (i == env.step_budget - 1)
    assert env.outcome == Outcome.TIMEOUT
    with pytest.raises(EpisodeFinished):
        env.step(Action.WAIT)


def test_step_before_reset_raises():
    env = WarehouseEnv(load_map(OPEN_4X3))
    with pytest.raises(EpisodeFinished):
        env.step(Action.WAIT)


def test_obstacle_motion_respects_period_and_phase():
    env = WarehouseEnv(load_map(TWO_PATROLS), STILL)
    env.reset(0)
    loop0 = env.map.obstacle_specs[0].waypoint_loop
    loop1 = env.map.obstacle_specs[1].waypoint_loop
    seen = []
    for t in range(8):
        seen.append(tuple(env.obstacle_positions()))
        env.step(Action.WAIT)
    for t, (p0, p1) in enumerate(seen):
        assert p0 == loop0[t % len(loop0)]
        assert p1 == loop1[(1 + t // 2) % len(loop1)]


def test_phase_jitter_is_seeded():
    env = WarehouseEnv(load_map(TWO_PATROLS))
    env.reset(123)
    first = env.obstacle_positions()
    env.reset(123)
    assert env.obstacle_positions() == first
    starts = set()
    for seed in range(12):
        env.reset(seed)
        starts.add(tuple(env.obstacle_positions()))
    assert len(starts) > 1


def test_observation_window_and_deltas():
    env = WarehouseEnv(load_map(OPEN_4X3), STILL)
    env.reset(0)
    obs = env.observe()
    patch = obs.local_patch.reshape(5, 5)
    assert patch[:2, :].all()  # rows above the grid read blocked
    assert patch[:, :2].all()  # columns left of the grid read blocked
    assert patch[2, 2] == 0.0  # robot cell is free
    assert obs.goal_delta == (3 / 3, 0.0)
    assert obs.waypoint_delta == (0.0, 0.0)
    way = env.observe(plan_waypoint=(1, 2))
    assert way.waypoint_delta == (1 / 3, 2 / 2)
    vec = obs.vector()
    assert vec.shape == (env.obs_dim,)
    assert env.obs_dim == 25 + 4
    assert np.array_equal(vec[:25], obs.local_patch)
    assert tuple(vec[25:27]) == obs.goal_delta


def test_observation_marks_shelves_and_obstacles():
    env = WarehouseEnv(load_map(TWO_PATROLS), STILL)
    env.reset(0)
    patch = env.observe().local_patch.reshape(5, 5)
    # robot at (0,0): shelf (1,1) sits at offset (+1,+1) from center (2,2)
    assert patch[3, 3] == 1.0
    assert patch[4, 3] == 1.0  # obstacle at (1,2)
    env.step(Action.WAIT)  # obstacle 0 moves to (2,2), off by (+2,+2)
    patch = env.observe().local_patch.reshape(5, 5)
    assert patch[4, 3] == 0.0
    assert patch[4, 4] == 1.0


def test_goal_delta_targets_nearest_unpicked_with_index_ties():
    env = WarehouseEnv(load_map(TWIN_GOALS), STILL)
    env.reset(0)
    obs = env.observe()
    assert obs.goal_delta == (-3 / 6, 0.0)  # tie at distance 3: lower index wins
    for _ in range(3):
        env.step(Action.LEFT)
    env.step(Action.PICK)
    obs = env.observe()
    assert obs.goal_delta == (6 / 6, 0.0)  # only the right goal remains


def test_snapshot_roundtrip_replays_identically():
    env = WarehouseEnv(load_map(TWO_PATROLS))
    env.reset(99)
    for a in (Action.RIGHT, Action.WAIT, Action.RIGHT):
        env.step(a)
    snap = env.get_snapshot()
    plan = [Action.RIGHT, Action.WAIT, Action.RIGHT, Action.RIGHT, Action.WAIT]
    first = [(env.step(a).reward, env.robot_position, env.obstacle_positions())
             for a in plan if not env.done]
    env.set_snapshot(snap)
    second = [(env.step(a).reward, env.robot_position, env.obstacle_positions())
              for a in plan if not env.done]
    assert first == second


def test_same_seed_reproduces_trajectory():
    env = WarehouseEnv(load_map(TWO_PATROLS))
    runs = []
    for _ in range(2):
        env.reset(7)
        trace = []
        for a in (Action.RIGHT, Action.RIGHT, Action.WAIT, Action.RIGHT):
            if env.done:
                break
            t = env.step(a)
            trace.append((t.reward, t.outcome, env.robot_position))
        runs.append(trace)
    assert runs[0] == runs[1]


def test_with_extra_shelves_validates():
    wmap = load_map(OPEN_4X3)
    out = with_extra_shelves(wmap, {(1, 2)}, name="mutated")
    assert not out.is_free((1, 2))
    assert out.name == "mutated"
    assert wmap.is_free((1, 2))  # original untouched
    with pytest.raises(InvalidMap):
        with_extra_shelves(wmap, {wmap.start})
    with pytest.raises(InvalidMap):
        with_extra_shelves(wmap, {wmap.goals[0]})


def test_env_config_requires_odd_window():
    with pytest.raises(ValueError):
        EnvConfig(window=4)
    with pytest.raises(ValueError):
        EnvConfig(window=0)
    env = WarehouseEnv(load_map(OPEN_4X3), EnvConfig(window=3))
    env.reset(0)
    assert env.observe().local_patch.shape == (9,)


def test_custom_rewards_are_used():
    rewards = RewardConfig(step_cost=-1.0, goal_reward=10.0)
    env = WarehouseEnv(load_map(OPEN_4X3), EnvConfig(rewards=rewards,
                                                     phase_jitter=False))
    env.reset(0)
    assert env.step(Action.RIGHT).reward == -1.0
    for _ in range(2):
        env.step(Action.RIGHT)
    assert env.step(Action.PICK).reward == 9.0
