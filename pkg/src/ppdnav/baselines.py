"""Comparator agents: a DQN learner, an A*-replanning controller, and
greedy PPO-only action selection (no planner input).

All three consume the same observations, seeds, and reward structure as the
hybrid controller so score differences isolate the algorithm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_planner import Unreachable, build_graph, nearest_goal, plan_between
from .numerics import (AdamState, MLP, NonFiniteValue, TwoHeadNet, adam_update)
from .ppd_controller import WaypointTracker, observed_obstacles
from .warehouse_env import Action, WarehouseEnv


@dataclass(frozen=True)
class DQNConfig:
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    sync_interval: int = 1000
    capacity: int = 50_000
    batch_size: int = 64
    min_fill: int = 1000
    lr: float = 3e-4

    def __post_init__(self) -> None:
        if not (0 <= self.eps_end <= self.eps_start <= 1):
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if self.eps_decay_steps < 1:
            raise ValueError("eps_decay_steps must be >= 1")
        if self.min_fill < self.batch_size:
            raise ValueError("min_fill must be >= batch_size")


def epsilon_at(step: int, config: DQNConfig) -> float:
    """Linear exploration schedule; hits eps_end exactly at eps_decay_steps."""
    frac = min(max(step, 0), config.eps_decay_steps) / config.eps_decay_steps
    return config.eps_start + frac * (config.eps_end - config.eps_start)


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.intp)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, obs: np.ndarray, action: int, reward: float,
             next_obs: np.ndarray, done: bool) -> None:
        i = self._next
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = done
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self._size < batch_size:
            raise ValueError(f"buffer holds {self._size} < batch {batch_size}")
        idx = rng.integers(self._size, size=batch_size)
        return {
            "obs": self.obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_obs": self.next_obs[idx],
            "dones": self.dones[idx],
        }

    # -- snapshot for checkpoint resume ------------------------------------

    def get_state(self) -> dict:
        n = self._size
        order = [(self._next + i) % self.capacity for i in range(n)] \
            if n == self.capacity else list(range(n))
        return {
            "obs": self.obs[order].copy(),
            "actions": self.actions[order].copy(),
            "rewards": self.rewards[order].copy(),
            "next_obs": self.next_obs[order].copy(),
            "dones": self.dones[order].copy(),
        }

    def set_state(self, state: dict) -> None:
        n = len(state["actions"])
        if n > self.capacity:
            raise ValueError("snapshot larger than capacity")
        self._next = 0
        self._size = 0
        for i in range(n):
            self.push(state["obs"][i], int(state["actions"][i]),
                      float(state["rewards"][i]), state["next_obs"][i],
                      bool(state["dones"][i]))


def dqn_td_target(batch: dict, target_net: MLP, gamma: float) -> np.ndarray:
    """Bellman targets y = r + gamma * max_a Q_target(s',a), zero beyond terminals."""
    q_next = target_net.forward(batch["next_obs"])
    return batch["rewards"] + gamma * q_next.max(axis=1) * (~batch["dones"])


def dqn_update(net: MLP, target_net: MLP, buffer: ReplayBuffer,
               opt: AdamState, config: DQNConfig, rng: np.random.Generator,
               learn_step: int) -> float:
    """One minibatch step on mean squared TD error; returns the loss.

    The target network re-copies the online parameters every sync_interval
    learn steps (including step 0, so training never bootstraps off stale
    initialization).
    """
    if len(buffer) < config.min_fill:
        raise ValueError(f"buffer fill {len(buffer)} below minimum {config.min_fill}")
    if learn_step % config.sync_interval == 0:
        target_net.set_params(net.get_params())
    batch = buffer.sample(config.batch_size, rng)
    targets = dqn_td_target(batch, target_net, config.gamma)
    q = net.forward(batch["obs"])
    n = len(targets)
    picked = q[np.arange(n), batch["actions"]]
    err = picked - targets
    loss = float(np.mean(err ** 2))
    upstream = np.zeros_like(q)
    upstream[np.arange(n), batch["actions"]] = 2.0 * err / n
    grad = net.backward(upstream)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteValue("TD gradient contains NaN/Inf")
    net.set_params(adam_update(opt, net.get_params(), grad))
    return loss


def dqn_act(net: MLP, obs: np.ndarray, epsilon: float,
            rng: np.random.Generator, n_actions: int) -> int:
    """Epsilon-greedy over Q values; greedy ties go to the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(n_actions))
    return int(np.argmax(net.forward(obs)[0]))


def ppo_only_act(net: TwoHeadNet, obs: np.ndarray) -> Action:
    """Greedy policy action with no plan input; ties go to the lowest index."""
    logits, _ = net.forward(obs)
    return Action(int(np.argmax(logits[0])))


class AStarReplanController:
    """Classical comparator: follow a static-graph A*/Dijkstra path, wait on
    interference, replan around persistently observed obstacles.

    Issues Pick on reaching an unpicked goal.  If a replan cannot reach the
    goal the controller waits forever and the episode times out.
    """

    def __init__(self, env: WarehouseEnv, wait_threshold: int = 3):
        self.env = env
        self.wait_threshold = wait_threshold
        self._graph = build_graph(env.map)
        self.tracker: WaypointTracker | None = None
        self._waited = 0

    def reset(self) -> None:
        self.tracker = None
        self._waited = 0

    def _replan(self, blocked: list) -> bool:
        pos = self.env.robot_position
        goals = self.env.unpicked_goals()
        try:
            if blocked:
                graph = build_graph(self.env.map,
                                    blocked=[c for c in blocked
                                             if c != pos and c not in goals])
            else:
                graph = self._graph
            goal, _ = nearest_goal(graph, pos, goals)
            plan = plan_between(graph, pos, goal)
        except Unreachable:
            return False
        self.tracker = WaypointTracker(plan, 1 if len(plan) > 1 else 0)
        self._waited = 0
        return True

    def act(self) -> Action:
        pos = self.env.robot_position
        goals = self.env.unpicked_goals()
        if pos in goals:
            self._waited = 0
            self.tracker = None     # next goal gets a fresh plan
            return Action.PICK
        if self.tracker is None and not self._replan([]):
            return Action.WAIT
        self.tracker.advance(pos)
        nxt = self.tracker.next_cell()
        observed = observed_obstacles(self.env)
        if nxt in observed:
            self._waited += 1
            if self._waited <= self.wait_threshold or not self._replan(observed):
                return Action.WAIT
            self.tracker.advance(pos)
            nxt = self.tracker.next_cell()
            if nxt in observed:
                return Action.WAIT
        else:
            self._waited = 0
        dx, dy = nxt[0] - pos[0], nxt[1] - pos[1]
        if (dx, dy) == (0, -1):
            return Action.UP
        if (dx, dy) == (0, 1):
            return Action.DOWN
        if (dx, dy) == (-1, 0):
            return Action.LEFT
        if (dx, dy) == (1, 0):
            return Action.RIGHT
        # plan discontinuity (should not happen): recover by replanning
        self.tracker = None
        return Action.WAIT
