"""Run configuration: defaults, key=value config files, flag precedence,
and the content hash that names output directories.

Resolution order is flags over file over defaults; unknown keys anywhere are
rejected outright so a typo can never silently fall back to a default.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


class UnknownKey(ValueError):
    pass


class MissingMap(FileNotFoundError):
    pass


class MissingCheckpoint(FileNotFoundError):
    pass


@dataclass
class RunConfig:
    # run identity
    subcommand: str = "benchmark"
    map: str = ""                  # path or packaged map name; "" = standard suite
    algo: str = "ppd"              # ppd | ppo | dqn | astar
    seed: int = 42
    steps: int = 200_000
    out: str = "runs"
    parallel: int = 1
    checkpoint: list[str] = field(default_factory=list)   # repeatable algo=path
    episodes: int = 100            # per map in benchmarks/eval
    # environment
    window: int = 5
    phase_jitter: bool = True
    budget_factor: int = 4
    # shared optimizer
    lr: float = 3e-4
    gamma: float = 0.99
    # clipped-surrogate learner
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    lam: float = 0.95
    rollout_steps: int = 2048
    epochs: int = 4
    minibatch_size: int = 256
    normalize_adv: bool = True
    # planner fusion
    lookahead: int = 2
    shaping_weight: float = 0.05
    block_threshold: int = 3
    wait_threshold: int = 3        # classical controller's patience
    # Q-learner
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 50_000
    sync_interval: int = 1000
    capacity: int = 50_000
    batch_size: int = 64
    min_fill: int = 1000
    stats_window: int = 10         # episodes per Q-learner stats line
    # bookkeeping
    checkpoint_every: int = 50     # updates (policy) / episodes (Q-learner)
    # robustness perturbations
    obstacle_multiplier: float = 1.5
    period_jitter: int = 1
    shelf_mutation_rate: float = 0.05
    resume: str = ""               # checkpoint to continue training from


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
# not settable through config files; they come from the command line only
_CLI_ONLY = {"subcommand", "checkpoint", "resume"}
# excluded from the content hash: they change where results go or how fast
# they are computed, never what they are
_HASH_EXCLUDED = {"out", "parallel"}


def _convert(name: str, raw: str):
    ftype = _FIELDS[name].type
    if ftype == "bool":
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise TypeError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
    except ValueError:
        raise TypeError(f"{name}: expected {ftype}, got {raw!r}") from None
    return raw


def read_config_file(path: Path) -> dict:
    """Parse a key=value file; blank lines and #-comments are skipped."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise TypeError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELDS or key in _CLI_ONLY:
            raise UnknownKey(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _convert(key, raw)
    return values


def resolve_config(subcommand: str, flag_values: dict,
                   config_file: str | None = None) -> RunConfig:
    """defaults <- config file <- flags; unknown flag keys rejected."""
    merged: dict = {}
    if config_file:
        merged.update(read_config_file(Path(config_file)))
    for key, value in flag_values.items():
        if value is None:
            continue
        if key not in _FIELDS:
            raise UnknownKey(f"unknown option {key!r}")
        merged[key] = value
    merged["subcommand"] = subcommand
    return RunConfig(**merged)


def config_hash(config: RunConfig) -> str:
    payload = {k: v for k, v in dataclasses.asdict(config).items()
               if k not in _HASH_EXCLUDED}
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def run_dir(config: RunConfig) -> Path:
    """Timestamp-free output directory named by the config content."""
    name = f"{config.subcommand}-{config.algo}-{config_hash(config)[:12]}"
    return Path(config.out) / name


def echo_config(config: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = dataclasses.asdict(config)
    payload["config_hash"] = config_hash(config)
    (directory / "config.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")


def parse_checkpoint_flags(entries: list[str]) -> dict[str, str]:
    """Repeatable --checkpoint entries: either 'algo=path' or a bare path."""
    mapping: dict[str, str] = {}
    for entry in entries:
        if "=" in entry:
            algo, path = entry.split("=", 1)
            mapping[algo.strip()] = path.strip()
        else:
            mapping[""] = entry.strip()
    return mapping
