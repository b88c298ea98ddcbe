"""n-step temporal-difference learning of action values.

Rewards live only at terminal states and there is no discounting, so the
n-step target for transition t collapses to either the episode's raw reward
(when the horizon covers the remaining steps) or the target network's value
at the bootstrap state.  The target network tracks the online one through an
exponential moving average.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nets
from .envs import Env
from .gfn import Trajectory

MSE = "mse"
HUBER = "huber"
BOOTSTRAP_MAX = "max"
BOOTSTRAP_TAKEN = "taken"


@dataclass(frozen=True)
class QConfig:
    n_step: int | None = None   # None means the environment's max trajectory length
    gamma: float = 1.0          # fixed; longer objects must not be penalised
    tau: float = 0.95
    epsilon: float = 0.1
    loss_kind: str = MSE
    bootstrap: str = BOOTSTRAP_MAX
    beta_scaled_targets: bool = False
    huber_delta: float = 1.0

    def __post_init__(self):
        if self.n_step is not None and self.n_step < 1:
            raise ValueError("n_step must be >= 1")
        if self.gamma != 1.0:
            raise ValueError("gamma is fixed at 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.loss_kind not in (MSE, HUBER):
            raise ValueError(f"loss_kind must be '{MSE}' or '{HUBER}'")
        if self.bootstrap not in (BOOTSTRAP_MAX, BOOTSTRAP_TAKEN):
            raise ValueError(f"bootstrap must be '{BOOTSTRAP_MAX}' or '{BOOTSTRAP_TAKEN}'")

    def horizon(self, env: Env) -> int:
        return self.n_step if self.n_step is not None else env.max_trajectory_length


def trajectory_reward(cfg: QConfig, traj: Trajectory, beta: float) -> float:
    if cfg.beta_scaled_targets:
        return traj.terminal_reward**beta
    return traj.terminal_reward


def nstep_targets(cfg: QConfig, spec: nets.NetSpec, target: nets.ParamSet,
                  env: Env, traj: Trajectory) -> list[float]:
    """One regression target per transition of the trajectory."""
    n = cfg.horizon(env)
    big_t = len(traj)
    reward = trajectory_reward(cfg, traj, env.spec.beta)
    targets = []
    boot_rows, boot_idx = [], []
    for t in range(big_t):
        if t + n >= big_t:
            targets.append(reward)
        else:
            targets.append(None)
            boot_rows.append(t)
            boot_idx.append(t + n)
    if boot_rows:
        xs = env.encode_batch([traj.states[i] for i in boot_idx])
        masks = np.stack([env.valid_mask(traj.states[i]) for i in boot_idx])
        res = nets.forward(spec, target, xs, masks)
        q = res.heads["q_values"]
        if cfg.bootstrap == BOOTSTRAP_MAX:
            boot = np.max(np.where(masks, q, -np.inf), axis=1)
        else:
            boot = q[np.arange(len(boot_idx)), [traj.actions[i] for i in boot_idx]]
        for row, val in zip(boot_rows, boot):
            targets[row] = float(val)
    return targets


def batch_targets(cfg: QConfig, spec: nets.NetSpec, target: nets.ParamSet,
                  env: Env, trajs: list[Trajectory]) -> np.ndarray:
    """n-step targets for every transition of every trajectory, flattened.

    Equivalent to concatenating ``nstep_targets`` per trajectory, but all
    bootstrap states share a single target-network forward pass.
    """
    n = cfg.horizon(env)
    targets = []
    boot_rows, boot_states, boot_actions = [], [], []
    for traj in trajs:
        reward = trajectory_reward(cfg, traj, env.spec.beta)
        big_t = len(traj)
        for t in range(big_t):
            if t + n >= big_t:
                targets.append(reward)
            else:
                boot_rows.append(len(targets))
                targets.append(0.0)
                boot_states.append(traj.states[t + n])
                boot_actions.append(traj.actions[t + n])
    out = np.asarray(targets, dtype=np.float64)
    if boot_rows:
        xs = env.encode_batch(boot_states)
        masks = np.stack([env.valid_mask(s) for s in boot_states])
        res = nets.forward(spec, target, xs, masks)
        q = res.heads["q_values"]
        if cfg.bootstrap == BOOTSTRAP_MAX:
            boot = np.max(np.where(masks, q, -np.inf), axis=1)
        else:
            boot = q[np.arange(len(boot_states)), boot_actions]
        out[boot_rows] = boot
    return out


def q_loss(cfg: QConfig, spec: nets.NetSpec, params: nets.ParamSet,
           target: nets.ParamSet, env: Env,
           trajs: list[Trajectory]) -> tuple[float, nets.Gradient]:
    """Regression of Q(s_t, a_t) onto the n-step targets, mean per transition."""
    if not trajs:
        raise ValueError("empty batch")
    tgts = batch_targets(cfg, spec, target, env, trajs)
    xs, masks, actions = [], [], []
    for traj in trajs:
        for i, a in enumerate(traj.actions):
            s = traj.states[i]
            xs.append(env.encode(s))
            masks.append(env.valid_mask(s))
            actions.append(a)
    x = np.stack(xs)
    mask = np.stack(masks)
    actions = np.asarray(actions, dtype=np.int64)

    res = nets.forward(spec, params, x, mask)
    pred = res.heads["q_values"][np.arange(len(actions)), actions]
    err = pred - tgts
    n = len(err)
    if cfg.loss_kind == MSE:
        loss = float(np.mean(err**2))
        d_pred = 2.0 * err / n
    else:
        d = cfg.huber_delta
        small = np.abs(err) <= d
        loss = float(np.mean(np.where(small, 0.5 * err**2, d * (np.abs(err) - 0.5 * d))))
        d_pred = np.where(small, err, d * np.sign(err)) / n

    d_q = np.zeros_like(res.heads["q_values"])
    d_q[np.arange(len(actions)), actions] = d_pred
    grad = nets.backward(spec, params, res, {"q_values": d_q})
    return loss, grad


def q_loss_value(cfg, spec, params, target, env, trajs) -> float:
    return q_loss(cfg, spec, params, target, env, trajs)[0]


def ema_update(target: nets.ParamSet, online: nets.ParamSet, tau: float) -> nets.ParamSet:
    """target <- tau * target + (1 - tau) * online, elementwise."""
    if target.vector.shape != online.vector.shape:
        raise ValueError("target/online parameter shapes differ")
    target.vector *= tau
    target.vector += (1.0 - tau) * online.vector
    target.log_z = tau * target.log_z + (1.0 - tau) * online.log_z
    return target
