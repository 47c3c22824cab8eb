"""Clipped-surrogate policy optimization over warehouse navigation tasks.

The objective maximized is J = L_clip - c1 * L_vf + c2 * entropy, where
L_clip averages min(r*A, clip(r, 1-eps, 1+eps)*A) over the batch, r is the
probability ratio against the pre-update policy, and L_vf is the mean squared
error of the value head against discounted returns.  Gradients are exact
(hand-propagated through numerics.TwoHeadNet); the optimizer minimizes -J.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import AdamState, Categorical, NonFiniteValue, TwoHeadNet, adam_update
from .warehouse_env import Action, Outcome, WarehouseEnv


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    gamma: float = 0.99
    lam: float = 0.95
    rollout_steps: int = 2048
    epochs: int = 4
    minibatch_size: int = 256
    lr: float = 3e-4
    normalize_adv: bool = True

    def __post_init__(self) -> None:
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must be in [0, 1]")
        if self.rollout_steps % self.minibatch_size != 0:
            raise ValueError("minibatch_size must divide rollout_steps")


class PlainNavTask:
    """Policy-facing view of a WarehouseEnv with no planner attached.

    Observations come straight from the env (the waypoint channel stays at
    zero) and rewards are the env's own.  Episode seeds are drawn from the
    rollout RNG so auto-resets stay reproducible.
    """

    def __init__(self, env: WarehouseEnv):
        self.env = env
        self.obs_dim = env.obs_dim
        self.n_actions = len(Action)

    def reset(self, seed: int) -> np.ndarray:
        _, obs = self.env.reset(seed)
        return obs.vector()

    def step(self, action: int) -> tuple[np.ndarray, float, bool, dict]:
        result = self.env.step(Action(action))
        info = {"outcome": result.outcome, "path_length": self.env.path_length}
        return result.next_obs.vector(), result.reward, result.done, info


@dataclass
class RolloutBuffer:
    obs: np.ndarray          # (n, obs_dim)
    actions: np.ndarray      # (n,) intp
    rewards: np.ndarray      # (n,)
    dones: np.ndarray        # (n,) bool
    log_probs: np.ndarray    # (n,) log pi_old(a|s)
    values: np.ndarray       # (n,) V_old(s)
    last_value: float        # bootstrap V(s_T) for a truncated final episode
    last_done: bool
    returns: np.ndarray | None = None
    advantages: np.ndarray | None = None
    # stats over episodes that finished during collection (partial episode
    # appended if none did, so the log always has a number)
    episode_returns: list[float] = field(default_factory=list)
    episode_lengths: list[int] = field(default_factory=list)
    episode_path_lengths: list[int] = field(default_factory=list)
    episode_outcomes: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rewards)


def collect_rollout(task, net: TwoHeadNet, config: PPOConfig,
                    rng: np.random.Generator) -> RolloutBuffer:
    """Run the policy for exactly rollout_steps transitions, auto-resetting."""
    n = config.rollout_steps
    obs_buf = np.zeros((n, task.obs_dim))
    act_buf = np.zeros(n, dtype=np.intp)
    rew_buf = np.zeros(n)
    done_buf = np.zeros(n, dtype=bool)
    lp_buf = np.zeros(n)
    val_buf = np.zeros(n)
    ep_returns: list[float] = []
    ep_lengths: list[int] = []
    ep_paths: list[int] = []
    ep_outcomes: list[int] = []

    obs = task.reset(int(rng.integers(2 ** 63)))
    ep_return, ep_len = 0.0, 0
    for t in range(n):
        logits, value = net.forward(obs)
        dist = Categorical(logits)
        action = int(dist.sample(rng)[0])
        obs_buf[t] = obs
        act_buf[t] = action
        lp_buf[t] = dist.log_prob([action])[0]
        val_buf[t] = value[0]
        obs, reward, done, info = task.step(action)
        rew_buf[t] = reward
        done_buf[t] = done
        ep_return += reward
        ep_len += 1
        if done:
            ep_returns.append(ep_return)
            ep_lengths.append(ep_len)
            ep_paths.append(info["path_length"])
            ep_outcomes.append(int(info["outcome"]))
            ep_return, ep_len = 0.0, 0
            obs = task.reset(int(rng.integers(2 ** 63)))
    if done_buf[-1]:
        last_value = 0.0
    else:
        _, value = net.forward(obs)
        last_value = float(value[0])
    if not ep_returns:
        ep_returns.append(ep_return)
        ep_lengths.append(ep_len)
        ep_paths.append(task.env.path_length if hasattr(task, "env") else 0)
        ep_outcomes.append(int(Outcome.IN_PROGRESS))
    return RolloutBuffer(obs_buf, act_buf, rew_buf, done_buf, lp_buf, val_buf,
                         last_value, bool(done_buf[-1]),
                         episode_returns=ep_returns, episode_lengths=ep_lengths,
                         episode_path_lengths=ep_paths,
                         episode_outcomes=ep_outcomes)


def compute_returns(buffer: RolloutBuffer, gamma: float) -> np.ndarray:
    """Discounted returns R_t = r_t + gamma * R_{t+1}, resetting at done.

    A truncated final episode bootstraps with gamma * V(s_T).
    """
    n = len(buffer)
    returns = np.zeros(n)
    running = buffer.last_value
    for t in range(n - 1, -1, -1):
        if buffer.dones[t]:
            running = 0.0
        running = buffer.rewards[t] + gamma * running
        returns[t] = running
    return returns


def compute_advantages(buffer: RolloutBuffer, gamma: float, lam: float,
                       normalize: bool = False) -> np.ndarray:
    """Generalized advantage estimation with episode-boundary resets."""
    n = len(buffer)
    adv = np.zeros(n)
    next_value = buffer.last_value
    carry = 0.0
    for t in range(n - 1, -1, -1):
        if buffer.dones[t]:
            next_value = 0.0
            carry = 0.0
        delta = buffer.rewards[t] + gamma * next_value - buffer.values[t]
        carry = delta + gamma * lam * carry
        adv[t] = carry
        next_value = buffer.values[t]
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def post_process(buffer: RolloutBuffer, config: PPOConfig) -> None:
    """Fill returns and advantages in place (normalization per config)."""
    buffer.returns = compute_returns(buffer, config.gamma)
    buffer.advantages = compute_advantages(buffer, config.gamma, config.lam,
                                           normalize=config.normalize_adv)


class PolicyValueNet:
    """A TwoHeadNet plus the frozen pre-update snapshot used for the ratio."""

    def __init__(self, net: TwoHeadNet):
        self.net = net
        self.old = net.clone()

    def snapshot(self) -> None:
        self.old = self.net.clone()


def ppo_objective(net: TwoHeadNet, batch: dict, config: PPOConfig,
                  ) -> tuple[float, np.ndarray, dict]:
    """Composite objective J and the exact gradient of -J over flat params.

    batch keys: obs, actions, old_log_probs, advantages, returns.
    """
    obs = batch["obs"]
    actions = np.asarray(batch["actions"], dtype=np.intp)
    old_lp = batch["old_log_probs"]
    adv = batch["advantages"]
    ret = batch["returns"]
    n = len(actions)

    logits, values = net.forward(obs)
    dist = Categorical(logits)
    new_lp = dist.log_prob(actions)
    with np.errstate(over="ignore"):  # overflow surfaces as inf, caught below
        ratio = np.exp(new_lp - old_lp)
    if not np.all(np.isfinite(ratio)):
        raise NonFiniteValue("probability ratio overflowed")

    surr_raw = ratio * adv
    surr_clip = np.clip(ratio, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * adv
    surrogate = np.minimum(surr_raw, surr_clip)
    l_clip = surrogate.mean()
    vf_err = values - ret
    l_vf = np.mean(vf_err ** 2)
    entropy = dist.entropy()
    s_mean = entropy.mean()
    j = l_clip - config.value_coef * l_vf + config.entropy_coef * s_mean

    # dJ/d logpi_t: the min passes gradient only where the raw branch is active
    # (ties included: when the clip is not binding both branches coincide).
    coef = np.where(surr_raw <= surr_clip, surr_raw, 0.0) / n
    onehot = np.zeros_like(dist.probs)
    onehot[np.arange(n), actions] = 1.0
    d_logits = coef[:, None] * (onehot - dist.probs)
    # entropy: dH/dz_j = -p_j (log p_j + H)
    d_logits += (config.entropy_coef / n) * (-dist.probs
                                             * (dist.log_probs + entropy[:, None]))
    d_values = -config.value_coef * 2.0 * vf_err / n
    # net.backward accumulates d(sum upstream*out); we feed gradients of -J
    grad = net.backward(-d_logits, -d_values)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteValue("gradient contains NaN/Inf")
    diagnostics = {
        "l_clip": float(l_clip),
        "l_vf": float(l_vf),
        "entropy": float(s_mean),
        "clip_fraction": float(np.mean(np.abs(ratio - 1.0) > config.clip_eps)),
    }
    return float(j), grad, diagnostics


@dataclass
class UpdateStats:
    l_clip: float
    l_vf: float
    entropy: float
    clip_fraction: float


def update(pvnet: PolicyValueNet, opt: AdamState, buffer: RolloutBuffer,
           config: PPOConfig, rng: np.random.Generator) -> UpdateStats:
    """One full update phase: snapshot, epochs of shuffled minibatch ascent.

    On NonFiniteValue the pre-update parameters and optimizer state are
    restored before the error propagates.
    """
    if buffer.returns is None or buffer.advantages is None:
        post_process(buffer, config)
    pvnet.snapshot()
    net = pvnet.net
    theta_before = net.get_params()
    m_before = None if opt.m is None else opt.m.copy()
    v_before = None if opt.v is None else opt.v.copy()
    step_before = opt.step

    n = len(buffer)
    diag_acc: list[dict] = []
    try:
        for _ in range(config.epochs):
            order = rng.permutation(n)
            for start in range(0, n, config.minibatch_size):
                idx = order[start:start + config.minibatch_size]
                batch = {
                    "obs": buffer.obs[idx],
                    "actions": buffer.actions[idx],
                    "old_log_probs": buffer.log_probs[idx],
                    "advantages": buffer.advantages[idx],
                    "returns": buffer.returns[idx],
                }
                _, grad, diag = ppo_objective(net, batch, config)
                net.set_params(adam_update(opt, net.get_params(), grad))
                diag_acc.append(diag)
    except NonFiniteValue:
        net.set_params(theta_before)
        opt.m, opt.v, opt.step = m_before, v_before, step_before
        raise
    if not diag_acc:
        return UpdateStats(0.0, 0.0, 0.0, 0.0)
    return UpdateStats(
        l_clip=float(np.mean([d["l_clip"] for d in diag_acc])),
        l_vf=float(np.mean([d["l_vf"] for d in diag_acc])),
        entropy=float(np.mean([d["entropy"] for d in diag_acc])),
        clip_fraction=float(np.mean([d["clip_fraction"] for d in diag_acc])),
    )
