"""Flow-consistency training objectives for the sampler network.

Two objectives are provided, both against a uniform backward policy over
parent edges:

* trajectory balance: per trajectory, square of
  ``log_z + sum log P_F - beta*log R - sum log P_B``;
* sub-trajectory balance with equal weights: the same residual over every
  contiguous state window, using the learned state log-flow head at interior
  endpoints and the beta-scaled log reward at the terminal one.

Losses return both the scalar value and the full parameter gradient so the
trainer can feed the optimizer directly; the gradient path reuses the cached
forward activations.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from . import nets
from .envs import Env, State

TB = "tb"
SUBTB1 = "subtb1"


@dataclass(frozen=True)
class GfnConfig:
    objective: str = TB
    subtb_lambda: float = 1.0  # equal sub-trajectory weighting; only 1 is supported
    uniform_pb: bool = True

    def __post_init__(self):
        if self.objective not in (TB, SUBTB1):
            raise ValueError(f"objective must be '{TB}' or '{SUBTB1}'")
        if self.objective == SUBTB1 and self.subtb_lambda != 1.0:
            raise ValueError("subtb_lambda is fixed at 1")
        if not self.uniform_pb:
            raise ValueError("only the uniform backward policy is implemented")


@dataclass
class Trajectory:
    states: list[State]
    actions: list[int]
    terminal_reward: float
    log_reward_beta: float

    def __len__(self) -> int:
        return len(self.actions)


def trajectory_from_actions(env: Env, actions) -> Trajectory:
    s = env.initial_state()
    states = [s]
    for a in actions:
        s = env.apply(s, a)
        states.append(s)
    if not s.terminal:
        raise ValueError("action sequence does not reach a terminal state")
    r, logr = env.reward(s)
    return Trajectory(states=states, actions=list(actions), terminal_reward=r, log_reward_beta=logr)


@dataclass
class _Batch:
    """Flattened view of a trajectory batch: one row per decision step."""

    x: np.ndarray            # (N, in)
    mask: np.ndarray         # (N, A)
    actions: np.ndarray      # (N,)
    traj_id: np.ndarray      # (N,)
    log_pb: np.ndarray       # (N,)
    log_reward_beta: np.ndarray  # (B,)
    lengths: np.ndarray      # (B,)
    offsets: np.ndarray      # (B,) row offset of each trajectory


def flatten_batch(env: Env, trajs: list[Trajectory]) -> _Batch:
    xs, masks, actions, tids, lpb = [], [], [], [], []
    offsets = []
    for t, traj in enumerate(trajs):
        offsets.append(len(actions))
        for i, a in enumerate(traj.actions):
            s = traj.states[i]
            xs.append(env.encode(s))
            masks.append(env.valid_mask(s))
            actions.append(a)
            tids.append(t)
            lpb.append(-math.log(env.n_parent_edges(traj.states[i + 1])))
    return _Batch(
        x=np.stack(xs),
        mask=np.stack(masks),
        actions=np.asarray(actions, dtype=np.int64),
        traj_id=np.asarray(tids, dtype=np.int64),
        log_pb=np.asarray(lpb, dtype=np.float64),
        log_reward_beta=np.asarray([t.log_reward_beta for t in trajs]),
        lengths=np.asarray([len(t) for t in trajs], dtype=np.int64),
        offsets=np.asarray(offsets, dtype=np.int64),
    )


def log_pf_trajectory(spec: nets.NetSpec, params: nets.ParamSet, env: Env,
                      traj: Trajectory) -> tuple[float, list[float]]:
    """Total and per-step log-probabilities of the taken actions under P_F."""
    per_step = []
    for s, a in zip(traj.states[:-1], traj.actions):
        mask = env.valid_mask(s)
        if not mask[a]:
            raise ValueError(f"action {a} invalid at state {s}")
        res = nets.forward(spec, params, env.encode(s)[None, :], mask[None, :])
        logp = nets.masked_log_softmax(res.heads["policy_logits"], mask[None, :])
        per_step.append(float(logp[0, a]))
    return float(sum(per_step)), per_step


def log_pb_trajectory(env: Env, traj: Trajectory) -> tuple[float, list[float]]:
    """Uniform-backward log-probabilities: -log(#parent edges) of each next state."""
    per_step = [-math.log(len(env.parents(s))) for s in traj.states[1:]]
    return float(sum(per_step)), per_step


def tb_loss(spec: nets.NetSpec, params: nets.ParamSet, env: Env,
            trajs: list[Trajectory]) -> tuple[float, nets.Gradient]:
    """Trajectory-balance loss and its gradient, averaged over the batch."""
    if not trajs:
        raise ValueError("empty batch")
    b = flatten_batch(env, trajs)
    res = nets.forward(spec, params, b.x, b.mask)
    logp = nets.masked_log_softmax(res.heads["policy_logits"], b.mask)
    probs = np.where(b.mask, np.exp(logp), 0.0)
    lp_step = logp[np.arange(len(b.actions)), b.actions]

    n_traj = len(trajs)
    sum_lp = np.bincount(b.traj_id, weights=lp_step, minlength=n_traj)
    sum_lpb = np.bincount(b.traj_id, weights=b.log_pb, minlength=n_traj)
    err = params.log_z + sum_lp - b.log_reward_beta - sum_lpb
    loss = float(np.mean(err**2))

    # d loss / d logits = coeff * (onehot(action) - probs) on valid entries
    coeff = (2.0 / n_traj) * err[b.traj_id]
    d_logits = -coeff[:, None] * probs
    d_logits[np.arange(len(b.actions)), b.actions] += coeff
    grad = nets.backward(spec, params, res, {"policy_logits": d_logits})
    grad.log_z = float((2.0 / n_traj) * err.sum())
    return loss, grad


def tb_loss_value(spec: nets.NetSpec, params: nets.ParamSet, env: Env,
                  trajs: list[Trajectory]) -> float:
    return tb_loss(spec, params, env, trajs)[0]


def subtb_loss(spec: nets.NetSpec, params: nets.ParamSet, env: Env,
               trajs: list[Trajectory]) -> tuple[float, nets.Gradient]:
    """Equal-weight sub-trajectory balance over all O(T^2) windows.

    Interior endpoint flows come from the ``state_log_flow`` head; the
    terminal endpoint is pinned to the beta-scaled log reward and receives no
    gradient.
    """
    if not trajs:
        raise ValueError("empty batch")
    b = flatten_batch(env, trajs)
    res = nets.forward(spec, params, b.x, b.mask)
    logp = nets.masked_log_softmax(res.heads["policy_logits"], b.mask)
    probs = np.where(b.mask, np.exp(logp), 0.0)
    lp_step = logp[np.arange(len(b.actions)), b.actions]
    flows = res.heads["state_log_flow"][:, 0]

    n_traj = len(trajs)
    loss = 0.0
    d_lp = np.zeros_like(lp_step)
    d_flow = np.zeros_like(flows)
    for t in range(n_traj):
        off, T = b.offsets[t], b.lengths[t]
        rows = slice(off, off + T)
        a_step = lp_step[rows] - b.log_pb[rows]
        c = np.concatenate(([0.0], np.cumsum(a_step)))           # (T+1,)
        f = np.concatenate((flows[rows], [b.log_reward_beta[t]]))  # (T+1,)
        n_idx, m_idx = np.triu_indices(T + 1, k=1)
        err = f[n_idx] - f[m_idx] + c[m_idx] - c[n_idx]
        n_pairs = len(err)
        loss += float(np.mean(err**2)) / n_traj

        w = 2.0 * err / (n_pairs * n_traj)
        # d err / d a_i = +1 for n <= i < m: accumulate with a difference array
        diff = np.zeros(T + 2)
        np.add.at(diff, n_idx, w)
        np.add.at(diff, m_idx, -w)
        d_lp[rows] += np.cumsum(diff)[:T]
        # d err / d f_n = +1, d err / d f_m = -1; terminal index T is pinned
        df = np.zeros(T + 1)
        np.add.at(df, n_idx, w)
        np.add.at(df, m_idx, -w)
        d_flow[rows] += df[:T]

    d_logits = -d_lp[:, None] * probs
    d_logits[np.arange(len(b.actions)), b.actions] += d_lp
    grad = nets.backward(
        spec, params, res,
        {"policy_logits": d_logits, "state_log_flow": d_flow[:, None]},
    )
    return loss, grad


def subtb_loss_value(spec: nets.NetSpec, params: nets.ParamSet, env: Env,
                     trajs: list[Trajectory]) -> float:
    return subtb_loss(spec, params, env, trajs)[0]


def gfn_loss(cfg: GfnConfig, spec: nets.NetSpec, params: nets.ParamSet, env: Env,
             trajs: list[Trajectory]) -> tuple[float, nets.Gradient]:
    if cfg.objective == TB:
        return tb_loss(spec, params, env, trajs)
    return subtb_loss(spec, params, env, trajs)
