"""Seeded warehouse grid world with static shelves and patrolling dynamic obstacles.

Coordinates are (x, y) with x increasing left-to-right and y increasing
top-to-bottom (row 0 of the map file is y = 0).

Map file format, one grid row per line:
    '.' free floor            '#' shelf (impassable)
    'S' robot start (exactly one)
    'G' pick target (one or more)
    'O' dynamic obstacle anchor

After the grid rows, each obstacle gets one key-value line (the i-th 'O' in
row-major reading order is obstacle i):

    obstacle 0: loop=(3,4)(4,4)(5,4)(4,4) period=1 phase=0

The obstacle cycles through the waypoint loop, advancing one waypoint every
``period`` ticks, starting at ``loop[phase]``. Consecutive waypoints (including
the wrap-around pair) must be 4-adjacent or identical, all on free cells, and
the anchor cell must be one of the waypoints.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

Cell = tuple[int, int]

FREE = 0
SHELF = 1


class ParseError(ValueError):
    """Map text violates the file format (unknown glyph, ragged rows, bad spec line)."""


class InvalidMap(ValueError):
    """Map parses but violates a semantic invariant (no start, no goal, bad loop)."""


class EpisodeFinished(RuntimeError):
    """step() called after the episode terminated."""


class Action(IntEnum):
    UP = 0      # y - 1
    DOWN = 1    # y + 1
    LEFT = 2    # x - 1
    RIGHT = 3   # x + 1
    WAIT = 4
    PICK = 5


MOVE_DELTAS = {
    Action.UP: (0, -1),
    Action.DOWN: (0, 1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
}

N_ACTIONS = len(Action)


class Outcome(IntEnum):
    IN_PROGRESS = 0
    SUCCESS = 1
    COLLISION = 2
    TIMEOUT = 3


@dataclass(frozen=True)
class DynamicObstacleSpec:
    waypoint_loop: tuple[Cell, ...]
    period: int = 1
    phase: int = 0


@dataclass
class WarehouseMap:
    width: int
    height: int
    grid: np.ndarray          # uint8 (height, width), FREE / SHELF
    start: Cell
    goals: list[Cell]
    obstacle_specs: list[DynamicObstacleSpec] = field(default_factory=list)
    name: str = "map"

    def is_free(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height and self.grid[y, x] == FREE

    def free_cells(self) -> list[Cell]:
        ys, xs = np.nonzero(self.grid == FREE)
        return [(int(x), int(y)) for x, y in zip(xs, ys)]

    def validate(self) -> None:
        if self.width < 2 or self.height < 2:
            raise InvalidMap(f"grid must be at least 2x2, got {self.width}x{self.height}")
        if self.grid.shape != (self.height, self.width):
            raise InvalidMap("grid shape does not match width/height")
        if not self.goals:
            raise InvalidMap("map has no goal")
        if not self.is_free(self.start):
            raise InvalidMap(f"start {self.start} is not a free cell")
        for g in self.goals:
            if not self.is_free(g):
                raise InvalidMap(f"goal {g} is not a free cell")
        if len(set(self.goals)) != len(self.goals):
            raise InvalidMap("duplicate goal cells")
        for i, spec in enumerate(self.obstacle_specs):
            loop = spec.waypoint_loop
            if not loop:
                raise InvalidMap(f"obstacle {i}: empty waypoint loop")
            if spec.period < 1:
                raise InvalidMap(f"obstacle {i}: period must be >= 1")
            if not (0 <= spec.phase < len(loop)):
                raise InvalidMap(f"obstacle {i}: phase {spec.phase} outside loop")
            for w in loop:
                if not self.is_free(w):
                    raise InvalidMap(f"obstacle {i}: waypoint {w} is not a free cell")
            for a, b in zip(loop, loop[1:] + loop[:1]):
                if abs(a[0] - b[0]) + abs(a[1] - b[1]) > 1:
                    raise InvalidMap(f"obstacle {i}: waypoints {a} and {b} not adjacent")


_OBSTACLE_RE = re.compile(
    r"^obstacle\s+(\d+)\s*:\s*loop=((?:\(\d+,\d+\))+)\s+period=(\d+)\s+phase=(\d+)\s*$"
)
_WAYPOINT_RE = re.compile(r"\((\d+),(\d+)\)")
_GRID_GLYPHS = set(".#SGO")


def load_map(text: str, name: str = "map") -> WarehouseMap:
    """Parse map-file content. Raises ParseError on syntax, InvalidMap on semantics."""
    grid_lines: list[str] = []
    spec_lines: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip():
            continue
        if line.lstrip().startswith("obstacle"):
            spec_lines.append((lineno, line.strip()))
            continue
        bad = set(line) - _GRID_GLYPHS
        if bad:
            raise ParseError(f"line {lineno}: unknown glyph {sorted(bad)!r}")
        if spec_lines:
            raise ParseError(f"line {lineno}: grid row after obstacle block")
        grid_lines.append(line)

    if not grid_lines:
        raise ParseError("map has no grid rows")
    width = len(grid_lines[0])
    if any(len(row) != width for row in grid_lines):
        raise ParseError("ragged rows: all grid rows must have equal length")
    height = len(grid_lines)

    grid = np.full((height, width), FREE, dtype=np.uint8)
    start: Cell | None = None
    goals: list[Cell] = []
    anchors: list[Cell] = []
    for y, row in enumerate(grid_lines):
        for x, ch in enumerate(row):
            if ch == "#":
                grid[y, x] = SHELF
            elif ch == "S":
                if start is not None:
                    raise InvalidMap("multiple start cells")
                start = (x, y)
            elif ch == "G":
                goals.append((x, y))
            elif ch == "O":
                anchors.append((x, y))

    if start is None:
        raise InvalidMap("map has no start cell")

    specs_by_index: dict[int, DynamicObstacleSpec] = {}
    for lineno, line in spec_lines:
        m = _OBSTACLE_RE.match(line)
        if m is None:
            raise ParseError(f"line {lineno}: malformed obstacle spec {line!r}")
        idx = int(m.group(1))
        loop = tuple((int(a), int(b)) for a, b in _WAYPOINT_RE.findall(m.group(2)))
        if idx in specs_by_index:
            raise ParseError(f"line {lineno}: duplicate obstacle index {idx}")
        specs_by_index[idx] = DynamicObstacleSpec(loop, int(m.group(3)), int(m.group(4)))

    if sorted(specs_by_index) != list(range(len(anchors))):
        raise InvalidMap(
            f"{len(anchors)} obstacle anchors but spec lines for indices {sorted(specs_by_index)}"
        )
    specs = [specs_by_index[i] for i in range(len(anchors))]
    for i, (anchor, spec) in enumerate(zip(anchors, specs)):
        if anchor not in spec.waypoint_loop:
            raise InvalidMap(f"obstacle {i}: anchor {anchor} not in its waypoint loop")

    wmap = WarehouseMap(width, height, grid, start, goals, specs, name=name)
    wmap.validate()
    return wmap


def load_map_file(path, name: str | None = None) -> WarehouseMap:
    from pathlib import Path

    p = Path(path)
    return load_map(p.read_text(), name=name or p.stem)


@dataclass(frozen=True)
class RewardConfig:
    step_cost: float = -0.01
    wall_penalty: float = -0.1
    false_pick_penalty: float = -0.2
    goal_reward: float = 1.0
    collision_penalty: float = -1.0
    timeout_reward: float = 0.0


@dataclass(frozen=True)
class EnvConfig:
    window: int = 5                 # egocentric patch side, odd
    phase_jitter: bool = True       # randomize obstacle phases per reset
    budget_factor: int = 4          # step budget = factor * (w + h) * n_goals
    rewards: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        if self.window % 2 != 1 or self.window < 1:
            raise ValueError("window must be odd and positive")


@dataclass(frozen=True)
class RobotState:
    position: Cell
    picked: int          # bitmask over goal indices
    step_count: int


@dataclass(frozen=True)
class Observation:
    local_patch: np.ndarray    # float64 (window*window,), 0 free / 1 blocked
    goal_delta: tuple[float, float]
    waypoint_delta: tuple[float, float]

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [self.local_patch, np.asarray(self.goal_delta), np.asarray(self.waypoint_delta)]
        )


@dataclass(frozen=True)
class Transition:
    obs: Observation
    action: Action
    reward: float
    next_obs: Observation
    done: bool
    outcome: Outcome


class WarehouseEnv:
    """Single-robot episode simulator. Not thread-safe; one instance per rollout stream.

    One step: the robot acts, then every obstacle due this tick advances one
    waypoint. Contact in any form terminates the episode as a collision:
    moving into an obstacle's current cell (this also covers same-tick swaps),
    or an obstacle landing on the robot.
    """

    def __init__(self, wmap: WarehouseMap, config: EnvConfig | None = None):
        wmap.validate()
        self.map = wmap
        self.config = config or EnvConfig()
        self.step_budget = self.config.budget_factor * (wmap.width + wmap.height) * len(wmap.goals)
        # static occupancy padded with out-of-bounds ring, indexed [y+pad, x+pad]
        pad = self.config.window // 2
        self._pad = pad
        occ = np.ones((wmap.height + 2 * pad, wmap.width + 2 * pad), dtype=np.float64)
        occ[pad:pad + wmap.height, pad:pad + wmap.width] = (wmap.grid == SHELF)
        self._static_occ = occ
        self._goal_index = {g: i for i, g in enumerate(wmap.goals)}
        self._all_picked_mask = (1 << len(wmap.goals)) - 1
        self._rng: np.random.Generator | None = None
        self.last_seed: int | None = None
        self._started = False

    # -- episode lifecycle ---------------------------------------------------

    def reset(self, seed: int) -> tuple[RobotState, Observation]:
        self._rng = np.random.Generator(np.random.PCG64(seed))
        self.last_seed = int(seed)
        self._phases = []
        for spec in self.map.obstacle_specs:
            phase = spec.phase
            if self.config.phase_jitter:
                phase = (phase + int(self._rng.integers(len(spec.waypoint_loop)))) % len(
                    spec.waypoint_loop
                )
            self._phases.append(phase)
        self._t = 0
        self._pos = self.map.start
        self._picked = 0
        self._steps = 0
        self._outcome = Outcome.IN_PROGRESS
        self._moves = 0
        self._picks_declared = 0
        self._correct_picks = 0
        self._started = True
        return self.state(), self.observe()

    @property
    def done(self) -> bool:
        return self._outcome != Outcome.IN_PROGRESS

    @property
    def outcome(self) -> Outcome:
        return self._outcome

    def state(self) -> RobotState:
        return RobotState(self._pos, self._picked, self._steps)

    @property
    def robot_position(self) -> Cell:
        return self._pos

    @property
    def path_length(self) -> int:
        """Number of successful one-cell translations so far."""
        return self._moves

    @property
    def picks_declared(self) -> int:
        return self._picks_declared

    @property
    def correct_picks(self) -> int:
        return self._correct_picks

    def goal_picked(self, index: int) -> bool:
        return bool(self._picked >> index & 1)

    def unpicked_goals(self) -> list[Cell]:
        return [g for i, g in enumerate(self.map.goals) if not self._picked >> i & 1]

    def obstacle_positions(self) -> list[Cell]:
        out = []
        for spec, phase in zip(self.map.obstacle_specs, self._phases):
            loop = spec.waypoint_loop
            out.append(loop[(phase + self._t // spec.period) % len(loop)])
        return out

    # -- dynamics ------------------------------------------------------------

    def step(self, action: Action | int) -> Transition:
        if not self._started:
            raise EpisodeFinished("reset() must be called before step()")
        if self.done:
            raise EpisodeFinished(f"episode already ended with {self._outcome.name}")
        action = Action(action)
        rewards = self.config.rewards
        obs_before = self.observe()
        reward = rewards.step_cost
        occupied = set(self.obstacle_positions())

        if action in MOVE_DELTAS:
            dx, dy = MOVE_DELTAS[action]
            target = (self._pos[0] + dx, self._pos[1] + dy)
            if not self.map.is_free(target):
                reward += rewards.wall_penalty
            elif target in occupied:
                # driving into an obstacle; also closes the same-tick swap loophole
                reward += rewards.collision_penalty
                self._outcome = Outcome.COLLISION
            else:
                self._pos = target
                self._moves += 1
        elif action == Action.PICK:
            self._picks_declared += 1
            gi = self._goal_index.get(self._pos)
            if gi is not None and not self._picked >> gi & 1:
                self._picked |= 1 << gi
                self._correct_picks += 1
                reward += rewards.goal_reward
            else:
                reward += rewards.false_pick_penalty

        if self._outcome == Outcome.IN_PROGRESS and self._picked == self._all_picked_mask:
            self._outcome = Outcome.SUCCESS

        if self._outcome == Outcome.IN_PROGRESS:
            self._t += 1
            if self._pos in set(self.obstacle_positions()):
                reward += rewards.collision_penalty
                self._outcome = Outcome.COLLISION

        self._steps += 1
        if self._outcome == Outcome.IN_PROGRESS and self._steps >= self.step_budget:
            reward += rewards.timeout_reward
            self._outcome = Outcome.TIMEOUT

        return Transition(
            obs=obs_before,
            action=action,
            reward=reward,
            next_obs=self.observe(),
            done=self.done,
            outcome=self._outcome,
        )

    # -- observation ---------------------------------------------------------

    def observe(self, plan_waypoint: Cell | None = None) -> Observation:
        k = self.config.window
        pad = self._pad
        x, y = self._pos
        patch = self._static_occ[y:y + k, x:x + k].copy()
        for ox, oy in self.obstacle_positions():
            px, py = ox - x + pad, oy - y + pad
            if 0 <= px < k and 0 <= py < k:
                patch[py, px] = 1.0
        goal_delta = (0.0, 0.0)
        unpicked = self.unpicked_goals()
        if unpicked:
            nearest = min(
                unpicked,
                key=lambda g: (abs(g[0] - x) + abs(g[1] - y), self._goal_index[g]),
            )
            goal_delta = self._normalize_delta(nearest)
        waypoint_delta = (0.0, 0.0)
        if plan_waypoint is not None:
            waypoint_delta = self._normalize_delta(plan_waypoint)
        return Observation(patch.reshape(-1), goal_delta, waypoint_delta)

    def _normalize_delta(self, cell: Cell) -> tuple[float, float]:
        x, y = self._pos
        return (
            (cell[0] - x) / max(1, self.map.width - 1),
            (cell[1] - y) / max(1, self.map.height - 1),
        )

    @property
    def obs_dim(self) -> int:
        return self.config.window ** 2 + 4

    # -- snapshot (checkpoint resume support) ---------------------------------

    def get_snapshot(self) -> dict:
        return {
            "pos": self._pos,
            "picked": self._picked,
            "steps": self._steps,
            "t": self._t,
            "phases": list(self._phases),
            "outcome": int(self._outcome),
            "moves": self._moves,
            "picks_declared": self._picks_declared,
            "correct_picks": self._correct_picks,
            "rng_state": self._rng.bit_generator.state,
        }

    def set_snapshot(self, snap: dict) -> None:
        self._pos = tuple(snap["pos"])
        self._picked = snap["picked"]
        self._steps = snap["steps"]
        self._t = snap["t"]
        self._phases = list(snap["phases"])
        self._outcome = Outcome(snap["outcome"])
        self._moves = snap["moves"]
        self._picks_declared = snap["picks_declared"]
        self._correct_picks = snap["correct_picks"]
        self._rng = np.random.Generator(np.random.PCG64())
        self._rng.bit_generator.state = snap["rng_state"]
        self._started = True


def with_extra_shelves(wmap: WarehouseMap, cells: set[Cell], name: str | None = None) -> WarehouseMap:
    """Copy of the map with extra shelf cells (used for perturbations, not replans)."""
    grid = wmap.grid.copy()
    for x, y in cells:
        grid[y, x] = SHELF
    out = replace(wmap, grid=grid, name=name or wmap.name)
    out.validate()
    return out
