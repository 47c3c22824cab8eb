"""Benchmark protocol: seeded episode batches, four comparison metrics, and
perturbed-environment robustness.

Accuracy ratio is episode-level (clean successes), recall and precision are
pick-target-level, F1 is their harmonic mean, and robustness is accuracy
retention under three environment perturbations (more obstacles, retimed
obstacles, mutated shelving).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .baselines import AStarReplanController, dqn_act, ppo_only_act
from .graph_planner import build_graph, nearest_goal
from .numerics import MLP, TwoHeadNet
from .ppd_controller import (PPDConfig, act, maybe_replan, observed_obstacles,
                             plan_initial)
from .seeding import seed_stream
from .warehouse_env import (Action, Cell, EnvConfig, Outcome, WarehouseEnv,
                            WarehouseMap, with_extra_shelves)


class EmptyRecords(ValueError):
    pass


@dataclass(frozen=True)
class EpisodeRecord:
    map_name: str
    seed: int
    outcome: Outcome
    picks_declared: int
    correct_picks: int
    targets_assigned: int
    path_length: int
    collisions: int
    episode_return: float = 0.0


@dataclass(frozen=True)
class MetricsRow:
    accuracy_ratio: float
    recall: float
    precision: float
    f1: float
    mean_path_length: float
    collision_rate: float
    timeout_rate: float
    episodes: int
    robustness: float | None = None


@dataclass(frozen=True)
class PerturbationProfile:
    obstacle_multiplier: float = 1.5
    period_jitter: int = 1
    shelf_mutation_rate: float = 0.05


@dataclass(frozen=True)
class IterationCurve:
    update_indices: list[int]
    path_lengths: list[float]
    stabilized_level: float


# -- agents: uniform start/action interface over the four algorithms -------


class PPDAgent:
    """Greedy hybrid controller: plan, track, replan on persistent blockage."""

    name = "ppd"

    def __init__(self, net: TwoHeadNet, config: PPDConfig | None = None):
        self.net = net
        self.config = config or PPDConfig()
        self._map = None
        self._graph = None
        self.tracker = None
        self.last_replanned = False

    def start(self, env: WarehouseEnv) -> None:
        if env.map is not self._map:
            self._map = env.map
            self._graph = build_graph(env.map)
        self._replan_to_nearest(env)
        self.last_replanned = False

    def _replan_to_nearest(self, env: WarehouseEnv) -> None:
        self.tracker = plan_initial(env.map, env.robot_position,
                                    env.unpicked_goals(),
                                    lookahead=self.config.lookahead,
                                    graph=self._graph)

    def action(self, env: WarehouseEnv) -> Action:
        self.last_replanned = False
        if self.tracker.goal not in env.unpicked_goals():
            self._replan_to_nearest(env)
            self.last_replanned = True
        self.tracker.advance(env.robot_position)
        self.tracker, replanned = maybe_replan(
            self.tracker, env.map, env.robot_position, observed_obstacles(env),
            threshold=self.config.block_threshold)
        self.last_replanned = self.last_replanned or replanned
        return act(env, self.net, self.tracker)


class PPOAgent:
    """Greedy policy with the waypoint channel left at zero (no planner)."""

    name = "ppo"

    def __init__(self, net: TwoHeadNet):
        self.net = net

    def start(self, env: WarehouseEnv) -> None:
        pass

    def action(self, env: WarehouseEnv) -> Action:
        return ppo_only_act(self.net, env.observe().vector())


class DQNAgent:
    """Action-value agent evaluated at its exploration floor.

    A small epsilon matches the policy the value function was trained under
    and breaks the two-cell argmax oscillations a pure greedy readout can
    fall into; the noise stream is derived from the episode seed so repeat
    runs stay byte-identical.
    """

    name = "dqn"

    def __init__(self, net: MLP, eval_epsilon: float = 0.05):
        self.net = net
        self.eval_epsilon = eval_epsilon
        self._rng = seed_stream(0, "eval-explore")

    def start(self, env: WarehouseEnv) -> None:
        self._rng = seed_stream(env.last_seed or 0, "eval-explore")

    def action(self, env: WarehouseEnv) -> Action:
        return Action(dqn_act(self.net, env.observe().vector(),
                              self.eval_epsilon, self._rng, len(Action)))


class AStarAgent:
    """Classical wait-then-replan path follower."""

    name = "astar"

    def __init__(self, wait_threshold: int = 3):
        self.wait_threshold = wait_threshold
        self._controller: AStarReplanController | None = None

    def start(self, env: WarehouseEnv) -> None:
        if self._controller is None or self._controller.env is not env:
            self._controller = AStarReplanController(env, self.wait_threshold)
        self._controller.reset()

    def action(self, env: WarehouseEnv) -> Action:
        return self._controller.act()


# -- episode batches and metrics -------------------------------------------


def run_episodes(agent, wmap: WarehouseMap, n: int, seed_base: int,
                 env_config: EnvConfig | None = None) -> list[EpisodeRecord]:
    """n independent seeded episodes; failed episodes are recorded, not dropped."""
    if n < 1:
        raise ValueError("need at least one episode")
    env = WarehouseEnv(wmap, env_config)
    records = []
    for i in range(n):
        seed = seed_base + i
        env.reset(seed)
        agent.start(env)
        ep_return = 0.0
        while not env.done:
            result = env.step(agent.action(env))
            ep_return += result.reward
        records.append(EpisodeRecord(
            map_name=wmap.name,
            seed=seed,
            outcome=env.outcome,
            picks_declared=env.picks_declared,
            correct_picks=env.correct_picks,
            targets_assigned=len(wmap.goals),
            path_length=env.path_length,
            collisions=1 if env.outcome == Outcome.COLLISION else 0,
            episode_return=ep_return,
        ))
    return records


def compute_metrics(records: list[EpisodeRecord]) -> MetricsRow:
    """Pure aggregation of a record batch into one comparison-table row."""
    if not records:
        raise EmptyRecords("no episode records")
    n = len(records)
    clean = sum(1 for r in records
                if r.outcome == Outcome.SUCCESS and r.collisions == 0)
    picks = sum(r.picks_declared for r in records)
    correct = sum(r.correct_picks for r in records)
    targets = sum(r.targets_assigned for r in records)
    accuracy = 100.0 * clean / n
    recall = 100.0 * correct / targets if targets else 100.0
    precision = 100.0 * correct / picks if picks else 100.0
    f1 = (2.0 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return MetricsRow(
        accuracy_ratio=accuracy,
        recall=recall,
        precision=precision,
        f1=f1,
        mean_path_length=float(np.mean([r.path_length for r in records])),
        collision_rate=100.0 * sum(r.collisions for r in records) / n,
        timeout_rate=100.0 * sum(1 for r in records
                                 if r.outcome == Outcome.TIMEOUT) / n,
        episodes=n,
    )


# -- environment perturbations ----------------------------------------------


def _connected_free_region(wmap: WarehouseMap, removed: Cell) -> bool:
    """True if the free cells minus `removed` form one 4-connected component."""
    free = set(wmap.free_cells()) - {removed}
    if not free:
        return False
    seen = {next(iter(sorted(free)))}
    queue = deque(seen)
    while queue:
        x, y = queue.popleft()
        for nb in ((x, y - 1), (x, y + 1), (x - 1, y), (x + 1, y)):
            if nb in free and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return len(seen) == len(free)


def perturb_obstacle_count(wmap: WarehouseMap, multiplier: float,
                           rng: np.random.Generator) -> WarehouseMap:
    """Raise the obstacle count to ceil(k*multiplier) by doubling up patrols.

    Each added obstacle reruns an existing waypoint loop half a cycle out of
    phase, so patrolled lanes carry denser traffic while every lane that was
    physically passable stays passable.  (Spawning fresh patrols on arbitrary
    free runs instead can wall off a corridor outright — a lengthwise patrol
    in a one-wide aisle is unpassable for every controller — which would
    measure map solvability, not algorithm robustness.)"""
    k = len(wmap.obstacle_specs)
    extra = math.ceil(k * multiplier) - k
    specs = list(wmap.obstacle_specs)
    for _ in range(extra):
        src = specs[int(rng.integers(k))]
        offset = max(1, len(src.waypoint_loop) // 2)
        specs.append(replace(
            src, phase=(src.phase + offset) % len(src.waypoint_loop)))
    out = replace(wmap, obstacle_specs=tuple(specs),
                  name=wmap.name + "+obstacles")
    out.validate()
    return out


def perturb_periods(wmap: WarehouseMap, jitter: int,
                    rng: np.random.Generator) -> WarehouseMap:
    """Retime every obstacle by +/- jitter (periods floored at 1)."""
    specs = [replace(s, period=max(1, s.period + int(rng.choice((-jitter, jitter)))))
             for s in wmap.obstacle_specs]
    out = replace(wmap, obstacle_specs=specs, name=wmap.name + "+periods")
    out.validate()
    return out


def perturb_shelves(wmap: WarehouseMap, rate: float,
                    rng: np.random.Generator) -> WarehouseMap:
    """Convert ~rate of free cells to shelves without disconnecting the floor."""
    protected = {wmap.start, *wmap.goals}
    for spec in wmap.obstacle_specs:
        protected.update(spec.waypoint_loop)
    candidates = [c for c in wmap.free_cells() if c not in protected]
    rng.shuffle(candidates)
    want = round(rate * len(wmap.free_cells()))
    added: set[Cell] = set()
    current = wmap
    for cell in candidates:
        if len(added) >= want:
            break
        if _connected_free_region(current, cell):
            added.add(cell)
            current = with_extra_shelves(current, {cell})
    return with_extra_shelves(wmap, added, name=wmap.name + "+shelves")


def perturbed_suites(suite: list[WarehouseMap], profile: PerturbationProfile,
                     seed_base: int) -> dict[str, list[WarehouseMap]]:
    """The three deterministic perturbation variants of a map suite."""
    variants: dict[str, list[WarehouseMap]] = {"obstacles": [], "periods": [],
                                               "shelves": []}
    for wmap in suite:
        variants["obstacles"].append(perturb_obstacle_count(
            wmap, profile.obstacle_multiplier,
            seed_stream(seed_base, "perturb-obstacles", wmap.name)))
        variants["periods"].append(perturb_periods(
            wmap, profile.period_jitter,
            seed_stream(seed_base, "perturb-periods", wmap.name)))
        variants["shelves"].append(perturb_shelves(
            wmap, profile.shelf_mutation_rate,
            seed_stream(seed_base, "perturb-shelves", wmap.name)))
    return variants


def robustness_eval(agent, suite: list[WarehouseMap], profile: PerturbationProfile,
                    n: int, seed_base: int, nominal_accuracy: float,
                    env_config: EnvConfig | None = None,
                    ) -> tuple[float, dict[str, float]]:
    """Accuracy retention under perturbation, averaged over the three variants.

    Each variant contributes min(1, perturbed/nominal); a nominal accuracy of
    zero scores zero by convention.
    """
    variant_accuracy: dict[str, float] = {}
    for variant, maps in perturbed_suites(suite, profile, seed_base).items():
        records: list[EpisodeRecord] = []
        for wmap in maps:
            records.extend(run_episodes(agent, wmap, n, seed_base, env_config))
        variant_accuracy[variant] = compute_metrics(records).accuracy_ratio
    if nominal_accuracy <= 0:
        return 0.0, variant_accuracy
    ratios = [min(1.0, acc / nominal_accuracy) for acc in variant_accuracy.values()]
    return 100.0 * float(np.mean(ratios)), variant_accuracy


# -- training-curve extraction ----------------------------------------------


def iteration_curve(log_entries: list[dict]) -> IterationCurve:
    """Path-length-per-update series plus its stabilized (last-decile) level."""
    indices = [int(e["update_index"]) for e in log_entries]
    lengths = [float(e["path_length_mean"]) for e in log_entries]
    if not indices:
        return IterationCurve([], [], float("nan"))
    tail = max(1, len(lengths) // 10)
    return IterationCurve(indices, lengths, float(np.mean(lengths[-tail:])))


# -- the shipped map suite ---------------------------------------------------

SUITE_NAMES = ["wh_10x10", "wh_12x12", "wh_16x12", "wh_20x20", "wh_24x30",
               "wh_30x40"]
STATIC_MAP_NAME = "static_10x10"


def load_packaged_map(name: str) -> WarehouseMap:
    from importlib import resources

    from .warehouse_env import load_map
    text = resources.files("ppdnav").joinpath(f"maps/{name}.map").read_text()
    return load_map(text, name=name)


def standard_suite() -> list[WarehouseMap]:
    return [load_packaged_map(name) for name in SUITE_NAMES]


def optimal_path_length(wmap: WarehouseMap) -> float:
    """Shortest possible total travel visiting the goals greedily by distance.

    For single-goal maps this is exactly the shortest-path cost; multi-goal
    maps use nearest-goal chaining, matching how the planner sequences picks.
    """
    graph = build_graph(wmap)
    pos = wmap.start
    remaining = list(wmap.goals)
    total = 0.0
    while remaining:
        goal, dist = nearest_goal(graph, pos, remaining)
        total += dist
        remaining.remove(goal)
        pos = goal
    return total
