"""Hybrid navigation controller: global shortest-path planning + local policy.

A Dijkstra plan to the nearest unpicked goal is threaded into the policy two
ways: the tracked waypoint enters the observation, and a potential built from
negated goal distance shapes the reward (base + gamma*phi(s') - phi(s), which
leaves the task's optima untouched).  Persistent blockage of the next plan
cell triggers a replan that treats currently observed obstacles as temporary
walls.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_planner import (NavGraph, PathPlan, Unreachable, build_graph,
                            dijkstra, nearest_goal, plan_between)
from .numerics import Categorical, TwoHeadNet
from .warehouse_env import Action, Cell, WarehouseEnv, WarehouseMap


@dataclass(frozen=True)
class PPDConfig:
    lookahead: int = 2          # cells ahead of the cursor to aim the policy at
    shaping_weight: float = 0.05
    block_threshold: int = 3    # ticks of next-cell occupancy tolerated before replanning

    def __post_init__(self) -> None:
        if self.lookahead < 1:
            raise ValueError("lookahead must be >= 1")
        if self.block_threshold < 0:
            raise ValueError("block_threshold must be >= 0")


@dataclass
class WaypointTracker:
    plan: PathPlan
    cursor: int
    lookahead: int = 2
    blocked_ticks: int = 0

    def advance(self, robot_pos: Cell) -> None:
        """Move the cursor past the plan cell the robot has reached or passed.

        "Passed" is judged by proximity: the nearest plan cell at or beyond the
        cursor (ties to the furthest index) counts as reached, so a robot
        side-stepping one lane off its route keeps receiving forward guidance
        rather than being steered back to the cell it dodged around.  The
        cursor never regresses and stays pinned at the final cell.
        """
        cells = self.plan.cells
        best = self.cursor - 1
        best_d = None
        for i in range(max(0, self.cursor - 1), len(cells)):
            d = abs(cells[i][0] - robot_pos[0]) + abs(cells[i][1] - robot_pos[1])
            if best_d is None or d <= best_d:
                best, best_d = i, d
        if best >= self.cursor:
            self.cursor = min(best + 1, len(cells) - 1)

    def target_cell(self) -> Cell:
        """The cell the policy is steered toward: lookahead past the cursor."""
        cells = self.plan.cells
        return cells[min(self.cursor + self.lookahead - 1, len(cells) - 1)]

    def next_cell(self) -> Cell:
        return self.plan.cells[self.cursor]

    @property
    def goal(self) -> Cell:
        return self.plan.cells[-1]


def plan_initial(wmap: WarehouseMap, robot_pos: Cell, goals: list[Cell],
                 lookahead: int = 2, graph: NavGraph | None = None) -> WaypointTracker:
    """Dijkstra plan from the robot to the nearest of the given goals."""
    graph = graph or build_graph(wmap)
    goal, _ = nearest_goal(graph, robot_pos, goals)
    plan = plan_between(graph, robot_pos, goal)
    cursor = 1 if len(plan) > 1 else 0
    return WaypointTracker(plan, cursor, lookahead=lookahead)


@dataclass(frozen=True)
class ShapingPotential:
    goal: Cell
    weight: float
    dist: dict[Cell, float]   # Dijkstra distance from the goal on the static graph

    def phi(self, cell: Cell) -> float:
        return -self.weight * self.dist[cell]

    @classmethod
    def from_map(cls, wmap: WarehouseMap, goal: Cell, weight: float,
                 graph: NavGraph | None = None) -> "ShapingPotential":
        graph = graph or build_graph(wmap)
        gu = graph.node_of.get(goal)
        if gu is None:
            raise Unreachable(f"goal {goal} is not a free cell")
        dmap = dijkstra(graph, gu)
        dist = {graph.cells[u]: d for u, d in enumerate(dmap.dist) if np.isfinite(d)}
        return cls(goal, weight, dist)


def shaped_reward(base_reward: float, s: Cell, s_next: Cell,
                  potential: ShapingPotential, gamma: float) -> float:
    return base_reward + gamma * potential.phi(s_next) - potential.phi(s)


def observed_obstacles(env: WarehouseEnv) -> list[Cell]:
    """Obstacle cells currently inside the robot's egocentric window."""
    pad = env.config.window // 2
    x, y = env.robot_position
    return [c for c in env.obstacle_positions()
            if abs(c[0] - x) <= pad and abs(c[1] - y) <= pad]


def maybe_replan(tracker: WaypointTracker, wmap: WarehouseMap, robot_pos: Cell,
                 observed: list[Cell], threshold: int = 3) -> tuple[WaypointTracker, bool]:
    """Count consecutive ticks the next plan cell is observed occupied; replan past B.

    Observed obstacle cells become temporary walls for the replan graph only.
    If that graph disconnects the goal, the old plan survives and the counter
    keeps running.
    """
    if tracker.cursor >= len(tracker.plan) or tracker.next_cell() not in observed:
        tracker.blocked_ticks = 0
        return tracker, False
    tracker.blocked_ticks += 1
    if tracker.blocked_ticks <= threshold:
        return tracker, False
    blocked = [c for c in observed if c != robot_pos and c != tracker.goal]
    try:
        graph = build_graph(wmap, blocked=blocked)
        plan = plan_between(graph, robot_pos, tracker.goal)
    except Unreachable:
        return tracker, False
    cursor = 1 if len(plan) > 1 else 0
    return WaypointTracker(plan, cursor, lookahead=tracker.lookahead), True


def act(env: WarehouseEnv, net: TwoHeadNet, tracker: WaypointTracker,
        rng: np.random.Generator | None = None) -> Action:
    """Pick an action from the plan-conditioned observation.

    Advances the cursor first so the waypoint never points at the cell under
    the robot.  With an RNG the policy samples; without, it plays argmax
    (lowest index on ties).
    """
    tracker.advance(env.robot_position)
    obs = env.observe(plan_waypoint=tracker.target_cell()).vector()
    logits, _ = net.forward(obs)
    if rng is None:
        return Action(int(np.argmax(logits[0])))
    return Action(int(Categorical(logits).sample(rng)[0]))


class PlannedNavTask:
    """Policy-facing view of a WarehouseEnv with the planner in the loop.

    Matches the PlainNavTask step/reset interface so the same optimizer
    drives both; the only differences are the waypoint channel in the
    observation and the shaping term on the reward.
    """

    def __init__(self, env: WarehouseEnv, config: PPDConfig | None = None,
                 gamma: float = 0.99):
        self.env = env
        self.config = config or PPDConfig()
        self.gamma = gamma
        self.obs_dim = env.obs_dim
        self.n_actions = len(Action)
        self._graph = build_graph(env.map)
        self._potentials: dict[Cell, ShapingPotential] = {}
        self.tracker: WaypointTracker | None = None
        self.potential: ShapingPotential | None = None
        self.replanned_last_step = False

    def _potential_for(self, goal: Cell) -> ShapingPotential:
        if goal not in self._potentials:
            self._potentials[goal] = ShapingPotential.from_map(
                self.env.map, goal, self.config.shaping_weight, graph=self._graph)
        return self._potentials[goal]

    def _rebuild_plan(self) -> None:
        self.tracker = plan_initial(self.env.map, self.env.robot_position,
                                    self.env.unpicked_goals(),
                                    lookahead=self.config.lookahead, graph=self._graph)
        self.potential = self._potential_for(self.tracker.goal)

    def _observe(self) -> np.ndarray:
        self.tracker.advance(self.env.robot_position)
        return self.env.observe(plan_waypoint=self.tracker.target_cell()).vector()

    def reset(self, seed: int) -> np.ndarray:
        self.env.reset(seed)
        self._rebuild_plan()
        self.replanned_last_step = False
        return self._observe()

    def step(self, action: int) -> tuple[np.ndarray, float, bool, dict]:
        s = self.env.robot_position
        picks_before = self.env.correct_picks
        result = self.env.step(Action(action))
        s_next = self.env.robot_position
        reward = shaped_reward(result.reward, s, s_next, self.potential, self.gamma)

        self.replanned_last_step = False
        if not result.done:
            if self.env.correct_picks > picks_before:
                # goal consumed: aim at the next nearest one
                self._rebuild_plan()
                self.replanned_last_step = True
            else:
                self.tracker.advance(s_next)
                self.tracker, replanned = maybe_replan(
                    self.tracker, self.env.map, s_next, observed_obstacles(self.env),
                    threshold=self.config.block_threshold)
                self.replanned_last_step = replanned
        obs = self._observe()
        info = {
            "outcome": result.outcome,
            "path_length": self.env.path_length,
            "cursor": self.tracker.cursor,
            "replanned": self.replanned_last_step,
        }
        return obs, reward, result.done, info
