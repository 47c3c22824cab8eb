"""Training loops and the checkpoint container.

Both learners derive every random stream from (seed, counter) so that a run
interrupted at any checkpoint and resumed reproduces the uninterrupted run
byte for byte: the policy-gradient loop keys rollout and shuffle RNGs off the
update index (each rollout starts on a fresh episode, so no simulator state
needs saving); the Q-learner checkpoints only at episode boundaries and
carries its replay buffer and partially-filled stats window along.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baselines import (DQNConfig, ReplayBuffer, dqn_act, dqn_update,
                        epsilon_at)
from .numerics import (AdamState, MLP, NonFiniteValue, TwoHeadNet,
                       deserialize_net, serialize_net)
from .ppd_controller import PPDConfig, PlannedNavTask
from .ppo import (PPOConfig, PlainNavTask, PolicyValueNet, collect_rollout,
                  post_process, update)
from .seeding import seed_stream
from .warehouse_env import EnvConfig, Outcome, WarehouseEnv, WarehouseMap

CKPT_MAGIC = b"PPDCKPT1"


@dataclass
class Checkpoint:
    algorithm: str
    config_hash: str
    map_name: str
    counters: dict            # algorithm-specific progress state
    net: TwoHeadNet | MLP
    opt: AdamState
    target_net: MLP | None = None
    buffer_state: dict | None = None


def _pack_arr(arr: np.ndarray) -> bytes:
    kind = {"f": 0, "i": 1, "b": 2}[arr.dtype.kind]
    dtype = {"f": "<f8", "i": "<i8", "b": "u1"}[arr.dtype.kind]
    data = np.ascontiguousarray(arr, dtype=dtype)
    head = struct.pack("<BB", kind, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + data.tobytes()


def _unpack_arr(buf: bytes, off: int) -> tuple[np.ndarray, int]:
    kind, ndim = struct.unpack_from("<BB", buf, off)
    off += 2
    shape = struct.unpack_from(f"<{ndim}Q", buf, off)
    off += 8 * ndim
    dtype = {0: "<f8", 1: "<i8", 2: "u1"}[kind]
    count = int(np.prod(shape)) if shape else 1
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(shape)
    off += arr.nbytes
    if kind == 0:
        arr = arr.astype(np.float64)
    elif kind == 1:
        arr = arr.astype(np.intp)
    else:
        arr = arr.astype(bool)
    return arr, off


def save_checkpoint(path: Path, ckpt: Checkpoint) -> None:
    header = json.dumps({
        "algorithm": ckpt.algorithm,
        "config_hash": ckpt.config_hash,
        "map_name": ckpt.map_name,
        "counters": ckpt.counters,
    }, sort_keys=True).encode("utf-8")
    blob = serialize_net(ckpt.net, ckpt.opt)
    out = [CKPT_MAGIC, struct.pack("<I", len(header)), header,
           struct.pack("<Q", len(blob)), blob]
    if ckpt.target_net is not None:
        tblob = serialize_net(ckpt.target_net)
        out.append(struct.pack("<B", 1))
        out.append(struct.pack("<Q", len(tblob)))
        out.append(tblob)
    else:
        out.append(struct.pack("<B", 0))
    if ckpt.buffer_state is not None:
        out.append(struct.pack("<B", 1))
        for key in ("obs", "actions", "rewards", "next_obs", "dones"):
            out.append(_pack_arr(np.asarray(ckpt.buffer_state[key])))
    else:
        out.append(struct.pack("<B", 0))
    path.write_bytes(b"".join(out))


def load_checkpoint(path: Path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if buf[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    off = len(CKPT_MAGIC)
    (hlen,) = struct.unpack_from("<I", buf, off)
    off += 4
    header = json.loads(buf[off:off + hlen].decode("utf-8"))
    off += hlen
    (blen,) = struct.unpack_from("<Q", buf, off)
    off += 8
    net, opt, _ = deserialize_net(buf[off:off + blen])
    off += blen
    (has_target,) = struct.unpack_from("<B", buf, off)
    off += 1
    target = None
    if has_target:
        (tlen,) = struct.unpack_from("<Q", buf, off)
        off += 8
        target, _, _ = deserialize_net(buf[off:off + tlen])
        off += tlen
    (has_buffer,) = struct.unpack_from("<B", buf, off)
    off += 1
    buffer_state = None
    if has_buffer:
        buffer_state = {}
        for key in ("obs", "actions", "rewards", "next_obs", "dones"):
            buffer_state[key], off = _unpack_arr(buf, off)
    return Checkpoint(header["algorithm"], header["config_hash"],
                      header["map_name"], header["counters"], net,
                      opt or AdamState(), target, buffer_state)


# -- shared logging -----------------------------------------------------------


def _stats_line(algorithm: str, update_index: int, returns: list[float],
                lengths: list[int], paths: list[float], outcomes: list[int],
                l_clip, l_vf, entropy, clip_fraction) -> str:
    success_paths = [p for p, o in zip(paths, outcomes)
                     if o == int(Outcome.SUCCESS)]
    plm = float(np.mean(success_paths if success_paths else paths))
    return json.dumps({
        "algorithm": algorithm,
        "update_index": update_index,
        "mean_reward": float(np.mean(returns)),
        "mean_episode_len": float(np.mean(lengths)),
        "L_clip": l_clip,
        "L_vf": l_vf,
        "entropy": entropy,
        "clip_fraction": clip_fraction,
        "path_length_mean": plm,
    }, sort_keys=True)


def make_task(algorithm: str, env: WarehouseEnv, ppd_config: PPDConfig,
              gamma: float):
    if algorithm == "ppd":
        return PlannedNavTask(env, ppd_config, gamma=gamma)
    if algorithm == "ppo":
        return PlainNavTask(env)
    raise ValueError(f"no policy-gradient task for algorithm {algorithm!r}")


# -- policy-gradient training (ppo / ppd) -------------------------------------


def train_policy(algorithm: str, wmap: WarehouseMap, total_steps: int, seed: int,
                 out_dir: Path, config_hash: str,
                 ppo_config: PPOConfig | None = None,
                 ppd_config: PPDConfig | None = None,
                 env_config: EnvConfig | None = None,
                 checkpoint_every: int = 50,
                 resume: Checkpoint | None = None) -> Path:
    """Train ppo/ppd for ceil(total_steps / rollout) updates; returns final
    checkpoint path.  Appends to stats.jsonl (truncates on a fresh start)."""
    cfg = ppo_config or PPOConfig()
    pcfg = ppd_config or PPDConfig()
    env = WarehouseEnv(wmap, env_config)
    task = make_task(algorithm, env, pcfg, cfg.gamma)
    n_updates = max(1, -(-total_steps // cfg.rollout_steps))

    out_dir.mkdir(parents=True, exist_ok=True)
    stats_path = out_dir / "stats.jsonl"
    final_path = out_dir / "checkpoint_final.ckpt"
    if resume is not None:
        net = resume.net
        opt = resume.opt
        start_update = int(resume.counters["update_index"]) + 1
    else:
        net = TwoHeadNet(env.obs_dim, task.n_actions,
                         rng=seed_stream(seed, "init", algorithm))
        opt = AdamState(lr=cfg.lr)
        start_update = 0
        stats_path.write_text("")
    pvnet = PolicyValueNet(net)

    def checkpoint_at(u: int) -> Checkpoint:
        return Checkpoint(algorithm, config_hash, wmap.name,
                          {"update_index": u, "env_steps": (u + 1) * cfg.rollout_steps},
                          net, opt)

    for u in range(start_update, n_updates):
        rollout_rng = seed_stream(seed, "rollout", algorithm, u)
        buffer = collect_rollout(task, net, cfg, rollout_rng)
        post_process(buffer, cfg)
        try:
            stats = update(pvnet, opt, buffer, cfg,
                           seed_stream(seed, "shuffle", algorithm, u))
        except NonFiniteValue:
            save_checkpoint(final_path, checkpoint_at(u - 1))
            raise
        line = _stats_line(algorithm, u, buffer.episode_returns,
                           buffer.episode_lengths,
                           [float(p) for p in buffer.episode_path_lengths],
                           [int(o) for o in buffer.episode_outcomes],
                           stats.l_clip, stats.l_vf, stats.entropy,
                           stats.clip_fraction)
        with stats_path.open("a") as fh:
            fh.write(line + "\n")
        if checkpoint_every and (u + 1) % checkpoint_every == 0 and u + 1 < n_updates:
            save_checkpoint(out_dir / f"checkpoint_{u:06d}.ckpt", checkpoint_at(u))
    save_checkpoint(final_path, checkpoint_at(n_updates - 1))
    return final_path


# -- Q-learning training (dqn) -------------------------------------------------


def train_dqn(wmap: WarehouseMap, total_steps: int, seed: int, out_dir: Path,
              config_hash: str, dqn_config: DQNConfig | None = None,
              env_config: EnvConfig | None = None, stats_window: int = 10,
              checkpoint_every: int = 200,
              resume: Checkpoint | None = None) -> Path:
    """Episode-loop Q-learning; stops at the first episode boundary past
    total_steps.  Checkpoints land on episode boundaries only."""
    cfg = dqn_config or DQNConfig()
    env = WarehouseEnv(wmap, env_config)
    task = PlainNavTask(env)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats_path = out_dir / "stats.jsonl"
    final_path = out_dir / "checkpoint_final.ckpt"

    if resume is not None:
        net = resume.net
        target = resume.target_net
        opt = resume.opt
        buffer = ReplayBuffer(cfg.capacity, env.obs_dim)
        buffer.set_state(resume.buffer_state)
        c = resume.counters
        episode = int(c["episode"])
        env_steps = int(c["env_steps"])
        learn_steps = int(c["learn_steps"])
        lines_written = int(c["lines_written"])
        window = {k: list(v) for k, v in c["window"].items()}
    else:
        init_rng = seed_stream(seed, "init", "dqn")
        net = MLP([env.obs_dim, 64, 64, task.n_actions], rng=init_rng)
        target = net.clone()
        opt = AdamState(lr=cfg.lr)
        buffer = ReplayBuffer(cfg.capacity, env.obs_dim)
        episode = env_steps = learn_steps = lines_written = 0
        window = {"returns": [], "lengths": [], "paths": [], "outcomes": [],
                  "losses": []}
        stats_path.write_text("")

    def flush_window() -> None:
        nonlocal lines_written
        losses = window["losses"]
        line = _stats_line("dqn", lines_written, window["returns"],
                           window["lengths"], window["paths"],
                           window["outcomes"], None,
                           float(np.mean(losses)) if losses else None,
                           None, None)
        with stats_path.open("a") as fh:
            fh.write(line + "\n")
        lines_written += 1
        for v in window.values():
            v.clear()

    def checkpoint() -> Checkpoint:
        return Checkpoint("dqn", config_hash, wmap.name,
                          {"episode": episode, "env_steps": env_steps,
                           "learn_steps": learn_steps,
                           "lines_written": lines_written, "window": window},
                          net, opt, target_net=target,
                          buffer_state=buffer.get_state())

    while env_steps < total_steps:
        ep_seed = int(seed_stream(seed, "episode", "dqn", episode).integers(2 ** 63))
        explore_rng = seed_stream(seed, "explore", episode)
        sample_rng = seed_stream(seed, "sample", episode)
        obs = task.reset(ep_seed)
        done = False
        ep_return, ep_len = 0.0, 0
        try:
            while not done:
                eps = epsilon_at(env_steps, cfg)
                action = dqn_act(net, obs, eps, explore_rng, task.n_actions)
                next_obs, reward, done, info = task.step(action)
                buffer.push(obs, action, reward, next_obs, done)
                obs = next_obs
                env_steps += 1
                ep_return += reward
                ep_len += 1
                if len(buffer) >= cfg.min_fill:
                    window["losses"].append(
                        dqn_update(net, target, buffer, opt, cfg, sample_rng,
                                   learn_steps))
                    learn_steps += 1
        except NonFiniteValue:
            save_checkpoint(final_path, checkpoint())
            raise
        episode += 1
        window["returns"].append(ep_return)
        window["lengths"].append(ep_len)
        window["paths"].append(float(info["path_length"]))
        window["outcomes"].append(int(info["outcome"]))
        if len(window["returns"]) >= stats_window:
            flush_window()
        if checkpoint_every and episode % checkpoint_every == 0 \
                and env_steps < total_steps:
            save_checkpoint(out_dir / f"checkpoint_{episode:06d}.ckpt", checkpoint())
    if window["returns"]:
        flush_window()
    save_checkpoint(final_path, checkpoint())
    return final_path
