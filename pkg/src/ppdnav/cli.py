"""Command-line harness: train, benchmark, eval, plan, and replay.

Every run writes into a config-hash-named directory under --out, starting
with an echo of the fully-resolved configuration, so any artifact can be
reproduced from its directory alone.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import DQNConfig
from .evaluation import (STATIC_MAP_NAME, SUITE_NAMES, AStarAgent, DQNAgent,
                         EpisodeRecord, MetricsRow, PerturbationProfile,
                         PPDAgent, PPOAgent, compute_metrics, iteration_curve,
                         load_packaged_map, optimal_path_length,
                         perturbed_suites, run_episodes, standard_suite)
from .figures import save_iteration_curve, save_metrics_chart, save_plan_figure
from .graph_planner import build_graph, nearest_goal, plan_between
from .ppd_controller import PPDConfig
from .ppo import PPOConfig
from .run_config import (_FIELDS, _convert, MissingCheckpoint, MissingMap,
                         RunConfig, UnknownKey, config_hash, echo_config,
                         parse_checkpoint_flags, resolve_config, run_dir)
from .training import load_checkpoint, train_dqn, train_policy
from .warehouse_env import (EnvConfig, WarehouseEnv, WarehouseMap,
                            load_map_file)


class TraceParseError(ValueError):
    pass


LEARNING_ALGOS = ("ppd", "ppo", "dqn")
ALL_ALGOS = LEARNING_ALGOS + ("astar",)


# -- config plumbing ----------------------------------------------------------


def env_config_from(c: RunConfig) -> EnvConfig:
    return EnvConfig(window=c.window, phase_jitter=c.phase_jitter,
                     budget_factor=c.budget_factor)


def ppo_config_from(c: RunConfig) -> PPOConfig:
    return PPOConfig(clip_eps=c.clip_eps, value_coef=c.value_coef,
                     entropy_coef=c.entropy_coef, gamma=c.gamma, lam=c.lam,
                     rollout_steps=c.rollout_steps, epochs=c.epochs,
                     minibatch_size=c.minibatch_size, lr=c.lr,
                     normalize_adv=c.normalize_adv)


def ppd_config_from(c: RunConfig) -> PPDConfig:
    return PPDConfig(lookahead=c.lookahead, shaping_weight=c.shaping_weight,
                     block_threshold=c.block_threshold)


def dqn_config_from(c: RunConfig) -> DQNConfig:
    return DQNConfig(gamma=c.gamma, eps_start=c.eps_start, eps_end=c.eps_end,
                     eps_decay_steps=c.eps_decay_steps,
                     sync_interval=c.sync_interval, capacity=c.capacity,
                     batch_size=c.batch_size, min_fill=c.min_fill, lr=c.lr)


_PACKAGED = set(SUITE_NAMES) | {STATIC_MAP_NAME}


def resolve_map(spec: str) -> WarehouseMap:
    if not spec:
        raise MissingMap("no map given (--map takes a file path or a shipped "
                         f"map name: {', '.join(sorted(_PACKAGED))})")
    path = Path(spec)
    if path.exists():
        return load_map_file(path)
    if spec in _PACKAGED:
        return load_packaged_map(spec)
    raise MissingMap(f"map {spec!r}: no such file or shipped map")


def build_agent(algo: str, config: RunConfig, checkpoint_path: Path | None):
    if algo == "astar":
        return AStarAgent(wait_threshold=config.wait_threshold)
    if checkpoint_path is None:
        raise MissingCheckpoint(f"algorithm {algo!r} needs --checkpoint")
    ckpt = load_checkpoint(checkpoint_path)
    if ckpt.algorithm != algo:
        raise MissingCheckpoint(
            f"{checkpoint_path} holds a {ckpt.algorithm!r} net, wanted {algo!r}")
    if algo == "ppd":
        return PPDAgent(ckpt.net, ppd_config_from(config))
    if algo == "ppo":
        return PPOAgent(ckpt.net)
    return DQNAgent(ckpt.net)


def find_checkpoint(algo: str, wmap_name: str, mapping: dict[str, str]) -> Path:
    base = mapping.get(algo, mapping.get(""))
    if base is None:
        raise MissingCheckpoint(f"no --checkpoint entry for {algo!r}")
    path = Path(base)
    if path.is_dir():
        candidate = path / f"{algo}_{wmap_name}.ckpt"
        if not candidate.exists():
            raise MissingCheckpoint(f"{candidate} not found")
        return candidate
    if not path.exists():
        raise MissingCheckpoint(f"{path} not found")
    return path


# -- train ---------------------------------------------------------------


def run_train(config: RunConfig) -> Path:
    if config.algo not in LEARNING_ALGOS:
        raise ValueError(f"--algo must be one of {LEARNING_ALGOS} for train")
    wmap = resolve_map(config.map)
    out = run_dir(config)
    echo_config(config, out)
    resume = load_checkpoint(Path(config.resume)) if config.resume else None
    chash = config_hash(config)
    if config.algo == "dqn":
        final = train_dqn(wmap, config.steps, config.seed, out, chash,
                          dqn_config_from(config), env_config_from(config),
                          stats_window=config.stats_window,
                          checkpoint_every=config.checkpoint_every,
                          resume=resume)
    else:
        final = train_policy(config.algo, wmap, config.steps, config.seed, out,
                             chash, ppo_config_from(config),
                             ppd_config_from(config), env_config_from(config),
                             checkpoint_every=config.checkpoint_every,
                             resume=resume)
    entries = [json.loads(line)
               for line in (out / "stats.jsonl").read_text().splitlines()]
    curve = iteration_curve(entries)
    save_iteration_curve(curve, out / "curve.png",
                         optimal=optimal_path_length(wmap))
    print(f"trained {config.algo} on {wmap.name}: {len(entries)} updates, "
          f"stabilized path length {curve.stabilized_level:.2f}")
    print(f"checkpoint: {final}")
    return out


# -- benchmark / eval ----------------------------------------------------


def _episodes_for_map(args) -> list[EpisodeRecord]:
    agent, wmap, episodes, seed, env_config = args
    return run_episodes(agent, wmap, episodes, seed, env_config)


def _suite_records(agent, suite, config: RunConfig) -> list[EpisodeRecord]:
    jobs = [(agent, wmap, config.episodes, config.seed, env_config_from(config))
            for wmap in suite]
    if config.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.parallel) as pool:
            batches = list(pool.map(_episodes_for_map, jobs))
    else:
        batches = [_episodes_for_map(job) for job in jobs]
    return [record for batch in batches for record in batch]


def _row_as_dict(row: MetricsRow) -> dict:
    return dataclasses.asdict(row)


CSV_COLUMNS = ["algorithm", "accuracy_ratio", "recall", "precision", "f1",
               "robustness", "mean_path_length", "collision_rate",
               "timeout_rate", "episodes"]


def write_report_csv(rows: dict[str, MetricsRow], path: Path) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for algo, row in rows.items():
        data = _row_as_dict(row)
        cells = [algo]
        for col in CSV_COLUMNS[1:]:
            value = data[col]
            if col == "episodes":
                cells.append(str(value))
            elif value is None:
                cells.append("")
            else:
                cells.append(f"{value:.2f}")
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def run_benchmark(config: RunConfig) -> Path:
    algos = [a.strip() for a in config.algo.split(",") if a.strip()]
    for algo in algos:
        if algo not in ALL_ALGOS:
            raise ValueError(f"unknown algorithm {algo!r}")
    suite = (standard_suite() if not config.map
             else [resolve_map(config.map)])
    out = run_dir(config)
    echo_config(config, out)
    mapping = parse_checkpoint_flags(config.checkpoint)
    profile = PerturbationProfile(config.obstacle_multiplier,
                                  config.period_jitter,
                                  config.shelf_mutation_rate)
    rows: dict[str, MetricsRow] = {}
    all_records: dict[str, list[dict]] = {}
    robustness_detail: dict[str, dict[str, float]] = {}
    for algo in algos:
        if algo in LEARNING_ALGOS:
            # agents are per-map when a checkpoint directory is given
            records: list[EpisodeRecord] = []
            agents = {}
            for wmap in suite:
                agent = build_agent(algo, config,
                                    find_checkpoint(algo, wmap.name, mapping))
                agents[wmap.name] = agent
                records.extend(run_episodes(agent, wmap, config.episodes,
                                            config.seed,
                                            env_config_from(config)))
        else:
            agent = build_agent(algo, config, None)
            agents = {wmap.name: agent for wmap in suite}
            records = _suite_records(agent, suite, config)
        nominal = compute_metrics(records)
        # robustness reuses each map's own agent
        variant_acc_total: dict[str, list[EpisodeRecord]] = {}
        for variant, maps in perturbed_suites(suite, profile,
                                              config.seed).items():
            vrecords: list[EpisodeRecord] = []
            for wmap, pmap in zip(suite, maps):
                vrecords.extend(run_episodes(agents[wmap.name], pmap,
                                             config.episodes, config.seed,
                                             env_config_from(config)))
            variant_acc_total[variant] = vrecords
        variant_accuracy = {v: compute_metrics(r).accuracy_ratio
                            for v, r in variant_acc_total.items()}
        if nominal.accuracy_ratio <= 0:
            robustness = 0.0
        else:
            ratios = [min(1.0, acc / nominal.accuracy_ratio)
                      for acc in variant_accuracy.values()]
            robustness = 100.0 * float(np.mean(ratios))
        rows[algo] = dataclasses.replace(nominal, robustness=robustness)
        robustness_detail[algo] = variant_accuracy
        all_records[algo] = [
            {**dataclasses.asdict(r), "outcome": int(r.outcome)}
            for r in records]
    write_report_csv(rows, out / "report.csv")
    report = {
        "config": dataclasses.asdict(config),
        "config_hash": config_hash(config),
        "rows": {algo: _row_as_dict(row) for algo, row in rows.items()},
        "robustness_detail": robustness_detail,
        "records": all_records,
    }
    (out / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n")
    save_metrics_chart(rows, out / "metrics.png")
    for algo, row in rows.items():
        print(f"{algo}: accuracy {row.accuracy_ratio:.2f}  recall "
              f"{row.recall:.2f}  f1 {row.f1:.2f}  robustness "
              f"{row.robustness:.2f}")
    return out


def record_trace_episode(agent, wmap: WarehouseMap, seed: int,
                         env_config: EnvConfig, algo: str) -> list[dict]:
    """One seeded episode as replay-trace lines (header, ticks, summary)."""
    env = WarehouseEnv(wmap, env_config)
    env.reset(seed)
    agent.start(env)
    lines = [{"type": "header", "map": wmap.name, "width": wmap.width,
              "height": wmap.height, "algorithm": algo, "seed": seed}]
    t = 0
    total = 0.0
    while not env.done:
        robot = list(env.robot_position)
        obstacles = [list(c) for c in env.obstacle_positions()]
        action = agent.action(env)
        tracker = getattr(agent, "tracker", None)
        result = env.step(action)
        total += result.reward
        lines.append({
            "t": t,
            "robot": robot,
            "obstacles": obstacles,
            "action": action.name,
            "reward": result.reward,
            "cursor": tracker.cursor if tracker is not None else None,
            "replanned": bool(getattr(agent, "last_replanned", False)),
        })
        t += 1
    lines.append({"type": "summary", "episode_return": total,
                  "outcome": env.outcome.name,
                  "path_length": env.path_length})
    return lines


def run_eval(config: RunConfig) -> Path:
    if config.algo not in ALL_ALGOS:
        raise ValueError(f"unknown algorithm {config.algo!r}")
    wmap = resolve_map(config.map)
    out = run_dir(config)
    echo_config(config, out)
    mapping = parse_checkpoint_flags(config.checkpoint)
    ckpt_path = (find_checkpoint(config.algo, wmap.name, mapping)
                 if config.algo in LEARNING_ALGOS else None)
    agent = build_agent(config.algo, config, ckpt_path)
    records = run_episodes(agent, wmap, config.episodes, config.seed,
                           env_config_from(config))
    row = compute_metrics(records)
    payload = {
        "config_hash": config_hash(config),
        "map": wmap.name,
        "algorithm": config.algo,
        "metrics": _row_as_dict(row),
        "records": [{**dataclasses.asdict(r), "outcome": int(r.outcome)}
                    for r in records],
    }
    (out / "eval.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")
    trace = record_trace_episode(agent, wmap, config.seed,
                                 env_config_from(config), config.algo)
    with (out / "trace.jsonl").open("w") as fh:
        for line in trace:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    print(f"{config.algo} on {wmap.name}: accuracy {row.accuracy_ratio:.2f} "
          f"over {row.episodes} episodes")
    return out


# -- plan ------------------------------------------------------------------


def run_plan(config: RunConfig) -> Path:
    wmap = resolve_map(config.map)
    out = run_dir(config)
    echo_config(config, out)
    graph = build_graph(wmap)
    goal, _ = nearest_goal(graph, wmap.start, wmap.goals)
    plan = plan_between(graph, wmap.start, goal)
    payload = {"map": wmap.name, "start": list(wmap.start),
               "goal": list(goal),
               "cells": [list(c) for c in plan.cells],
               "total_cost": plan.total_cost}
    (out / "plan.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n")
    save_plan_figure(wmap, plan, out / "plan.png")
    print(f"{wmap.name}: {wmap.start} -> {goal} cost {plan.total_cost:g} "
          f"({len(plan.cells)} cells)")
    return out


# -- replay ------------------------------------------------------------------


def load_trace(path: Path) -> tuple[dict, list[dict], dict]:
    try:
        lines = [json.loads(line)
                 for line in Path(path).read_text().splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise TraceParseError(f"cannot read trace {path}: {exc}") from None
    if not lines or lines[0].get("type") != "header":
        raise TraceParseError("trace must start with a header line")
    if lines[-1].get("type") != "summary":
        raise TraceParseError("trace must end with a summary line")
    header, ticks, summary = lines[0], lines[1:-1], lines[-1]
    width, height = header["width"], header["height"]
    total = 0.0
    for i, tick in enumerate(ticks):
        for keyname in ("t", "robot", "obstacles", "action", "reward"):
            if keyname not in tick:
                raise TraceParseError(f"tick {i}: missing field {keyname!r}")
        if tick["t"] != i:
            raise TraceParseError(f"tick {i}: t={tick['t']} out of order")
        for pos in [tick["robot"], *tick["obstacles"]]:
            x, y = pos
            if not (0 <= x < width and 0 <= y < height):
                raise TraceParseError(f"tick {i}: position {pos} outside "
                                      f"{width}x{height} map")
        total += tick["reward"]
    if ticks and abs(total - summary["episode_return"]) > 1e-9:
        raise TraceParseError(
            f"reward sum {total!r} != recorded return "
            f"{summary['episode_return']!r}")
    return header, ticks, summary


def render_frame(header: dict, tick: dict, wmap: WarehouseMap | None) -> str:
    width, height = header["width"], header["height"]
    rows = [["."] * width for _ in range(height)]
    if wmap is not None:
        for y in range(height):
            for x in range(width):
                if not wmap.is_free((x, y)):
                    rows[y][x] = "#"
        for gx, gy in wmap.goals:
            rows[gy][gx] = "G"
    for ox, oy in tick["obstacles"]:
        rows[oy][ox] = "O"
    rx, ry = tick["robot"]
    rows[ry][rx] = "R"
    return "\n".join("".join(r) for r in rows)


def run_replay(trace_path: str, frames: bool) -> None:
    header, ticks, summary = load_trace(Path(trace_path))
    wmap = None
    try:
        wmap = resolve_map(header["map"])
    except MissingMap:
        pass
    print(f"map {header['map']} ({header['width']}x{header['height']}), "
          f"algorithm {header['algorithm']}, seed {header['seed']}")
    for tick in ticks:
        if frames:
            print(f"-- t={tick['t']} action={tick['action']} "
                  f"reward={tick['reward']:+.3f}"
                  + (" [replanned]" if tick.get("replanned") else ""))
            print(render_frame(header, tick, wmap))
        else:
            cursor = tick.get("cursor")
            print(f"t={tick['t']:4d}  robot={tuple(tick['robot'])}  "
                  f"action={tick['action']:<5s}  reward={tick['reward']:+.3f}"
                  f"  cursor={'-' if cursor is None else cursor}"
                  + ("  replanned" if tick.get("replanned") else ""))
    print(f"outcome {summary['outcome']}, return "
          f"{summary['episode_return']:.3f}, path length "
          f"{summary['path_length']}")


# -- argument parsing ----------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--map", help="map file path or shipped map name")
    parser.add_argument("--algo", help="ppd | ppo | dqn | astar "
                                       "(benchmark takes a comma list)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--steps", type=int)
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--out", help="output root directory")
    parser.add_argument("--parallel", type=int)
    parser.add_argument("--checkpoint", action="append", default=None,
                        help="algo=path or path; repeatable")
    parser.add_argument("--set", action="append", default=None,
                        metavar="KEY=VALUE", dest="overrides",
                        help="override any config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppdnav",
        description="Warehouse grid navigation: hybrid planner-policy "
                    "training and benchmarking")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    train = sub.add_parser("train", help="train ppd, ppo, or dqn on one map")
    _add_common(train)
    train.add_argument("--resume", help="checkpoint to continue from")
    for name, description in (
            ("benchmark", "run the comparison suite and emit reports"),
            ("eval", "evaluate one algorithm on one map"),
            ("plan", "dump the shortest path for a map"),
    ):
        _add_common(sub.add_parser(name, help=description))
    replay = sub.add_parser("replay", help="re-render a recorded trace")
    replay.add_argument("trace", help="trace .jsonl file")
    replay.add_argument("--frames", action="store_true",
                        help="full grid frames instead of the tick table")
    return parser


def _flag_values(args: argparse.Namespace) -> dict:
    values = {key: getattr(args, key, None)
              for key in ("map", "algo", "seed", "steps", "out", "parallel",
                          "resume")}
    if getattr(args, "checkpoint", None):
        values["checkpoint"] = args.checkpoint
    for item in getattr(args, "overrides", None) or []:
        if "=" not in item:
            raise UnknownKey(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = (part.strip() for part in item.split("=", 1))
        if key not in _FIELDS:
            raise UnknownKey(f"unknown config key {key!r}")
        values[key] = _convert(key, raw)
    return values


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.subcommand == "replay":
        run_replay(args.trace, args.frames)
        return 0
    config = resolve_config(args.subcommand, _flag_values(args),
                            getattr(args, "config", None))
    if args.subcommand == "train":
        run_train(config)
    elif args.subcommand == "benchmark":
        run_benchmark(config)
    elif args.subcommand == "eval":
        run_eval(config)
    elif args.subcommand == "plan":
        run_plan(config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
