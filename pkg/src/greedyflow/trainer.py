"""Joint training of the sampler and action-value networks, plus probes.

Each iteration samples a minibatch of trajectories from the current behavior
policy, takes one flow-consistency gradient step on the sampler network and
one n-step TD gradient step on the Q network (both on the same minibatch),
nudges the target network, advances the greediness schedule, and appends one
JSONL metrics record.

Single-threaded runs are bit-reproducible: a fixed seed fixes parameter
initialisation, every sampled action, and therefore the metrics file.  The
``workers`` knob only changes how the batch is split across independent
random streams (shards are processed sequentially), so any worker count is
reproducible as well.  ``wall_ms`` in the metrics is 0 unless
``log_wall_time`` is set, because real timing would break byte-identical
reruns.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import json
import math
import time

import numpy as np

from . import nets
from .envs import Env, EnvSpec, State, build_env
from .gfn import GfnConfig, Trajectory, gfn_loss
from .metrics import MetricsWriter, ModeTracker, mean_pairwise_similarity, spearman
from .policy import (
    MaskGuard,
    MixVariant,
    P_OF_MAX,
    PSchedule,
    PURE_PF,
    mu_distribution,
    mu_distribution_batch,
    pofmax_pruned,
    sample_action,
    sample_action_batch,
    schedule_value,
)
from .qlearn import QConfig, ema_update, q_loss

SCHEMA_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 64
    lr: float = 1e-4
    lr_log_z: float = 1e-2
    q_lr: float = 1e-4
    seed: int = 0
    variant: MixVariant = MixVariant(PURE_PF)
    p_schedule: PSchedule = PSchedule()
    q: QConfig = QConfig()
    gfn: GfnConfig = GfnConfig()
    workers: int = 1
    gfn_updates: int = 1
    q_updates: int = 1
    checkpoint_every: int = 0  # 0 writes only the final checkpoint
    log_wall_time: bool = False

    def __post_init__(self):
        if self.iterations <= 0 or self.batch_size <= 0:
            raise ValueError("iterations and batch_size must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.gfn_updates < 0 or self.q_updates < 0:
            raise ValueError("update counts must be non-negative")


@dataclass
class RunState:
    env: Env
    cfg: TrainConfig
    hidden: tuple[int, ...]
    gfn_spec: nets.NetSpec
    q_spec: nets.NetSpec
    gfn_params: nets.ParamSet
    q_params: nets.ParamSet
    target_params: nets.ParamSet
    gfn_opt: nets.Adam
    q_opt: nets.Adam
    rng: np.random.Generator
    mode_tracker: ModeTracker
    step: int = 0
    guard: MaskGuard = field(default_factory=MaskGuard)

    def current_p(self) -> float:
        return schedule_value(self.cfg.p_schedule, self.step)


def make_specs(env: Env, hidden) -> tuple[nets.NetSpec, nets.NetSpec]:
    gfn_spec = nets.NetSpec(
        input_width=env.encoding_width,
        hidden=tuple(hidden),
        heads=(("policy_logits", env.action_space_size), ("state_log_flow", 1)),
        with_log_z=True,
    )
    q_spec = nets.NetSpec(
        input_width=env.encoding_width,
        hidden=tuple(hidden),
        heads=(("q_values", env.action_space_size),),
    )
    return gfn_spec, q_spec


def init_run(env: Env, cfg: TrainConfig, hidden=(64, 64)) -> RunState:
    variant = cfg.variant
    if variant.kind == "gfn_then_q" and variant.max_steps == 0:
        variant = replace(variant, max_steps=env.max_trajectory_length)
        cfg = replace(cfg, variant=variant)
    gfn_spec, q_spec = make_specs(env, hidden)
    seed_seq = np.random.SeedSequence(cfg.seed)
    init_seeds = seed_seq.generate_state(2)
    q_params = nets.init_params(q_spec, seed=int(init_seeds[1]))
    return RunState(
        env=env,
        cfg=cfg,
        hidden=tuple(hidden),
        gfn_spec=gfn_spec,
        q_spec=q_spec,
        gfn_params=nets.init_params(gfn_spec, seed=int(init_seeds[0])),
        q_params=q_params,
        target_params=q_params.copy(),
        gfn_opt=nets.Adam(gfn_spec, lr=cfg.lr, lr_log_z=cfg.lr_log_z),
        q_opt=nets.Adam(q_spec, lr=cfg.q_lr),
        rng=np.random.default_rng(seed_seq),
        mode_tracker=ModeTracker(
            reward_threshold=env.mode_reward_threshold(),
            distance_threshold=env.spec.mode_edit_threshold,
        ),
    )


def policy_heads(run: RunState, states) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward both nets on a list of non-terminal states.

    Returns (pf_probs, q_values, masks); invalid entries are 0 / -inf.
    """
    env = run.env
    x = env.encode_batch(states)
    masks = np.stack([env.valid_mask(s) for s in states])
    res = nets.forward(run.gfn_spec, run.gfn_params, x, masks)
    pf = nets.masked_softmax(res.heads["policy_logits"], masks)
    qres = nets.forward(run.q_spec, run.q_params, x, masks)
    return pf, qres.heads["q_values"], masks


def _rollout_shard(run: RunState, count: int, variant: MixVariant, p: float,
                   epsilon: float, rng: np.random.Generator) -> list[Trajectory]:
    env = run.env
    states = [[env.initial_state()] for _ in range(count)]
    actions: list[list[int]] = [[] for _ in range(count)]
    alive = list(range(count))
    step = 0
    while alive:
        cur = [states[i][-1] for i in alive]
        pf, qv, masks = policy_heads(run, cur)
        dists = mu_distribution_batch(variant, p, pf, qv, masks,
                                      step=step, guard=run.guard)
        acts = sample_action_batch(dists, rng, epsilon, valid_masks=masks)
        still = []
        for row, i in enumerate(alive):
            child = env.apply_cached(states[i][-1], int(acts[row]))
            states[i].append(child)
            actions[i].append(int(acts[row]))
            if not child.terminal:
                still.append(i)
        alive = still
        step += 1
    rewards = env.reward_batch([states[i][-1] for i in range(count)])
    beta = env.spec.beta
    return [
        Trajectory(states=states[i], actions=actions[i],
                   terminal_reward=float(rewards[i]),
                   log_reward_beta=beta * math.log(rewards[i]))
        for i in range(count)
    ]


def sample_batch(run: RunState, count: int, variant: MixVariant | None = None,
                 p: float | None = None, epsilon: float | None = None,
                 rng: np.random.Generator | None = None) -> list[Trajectory]:
    """Sample complete trajectories from the behavior policy.

    Defaults come from the run: its variant, its scheduled p at the current
    step, and the training exploration rate.  With ``workers`` > 1 the batch
    is split into shards with independent child streams.
    """
    cfg = run.cfg
    variant = variant if variant is not None else cfg.variant
    p = p if p is not None else run.current_p()
    epsilon = epsilon if epsilon is not None else cfg.q.epsilon
    rng = rng if rng is not None else run.rng
    if cfg.workers == 1:
        return _rollout_shard(run, count, variant, p, epsilon, rng)
    shard_sizes = [count // cfg.workers] * cfg.workers
    for i in range(count % cfg.workers):
        shard_sizes[i] += 1
    shard_seeds = rng.integers(0, 2**63, size=cfg.workers)
    out: list[Trajectory] = []
    for size, seed in zip(shard_sizes, shard_seeds):
        if size:
            out.extend(_rollout_shard(run, size, variant, p, epsilon,
                                      np.random.default_rng(int(seed))))
    return out


def train_step(run: RunState) -> dict:
    """One iteration: sample, update both nets, track modes, build the record."""
    cfg = run.cfg
    env = run.env
    p = run.current_p()
    trajs = sample_batch(run, cfg.batch_size)

    loss_gfn = math.nan
    for _ in range(cfg.gfn_updates):
        loss_gfn, grad = gfn_loss(cfg.gfn, run.gfn_spec, run.gfn_params, env, trajs)
        if not math.isfinite(loss_gfn):
            raise TrainingDiverged(f"non-finite sampler loss at step {run.step}")
        run.gfn_opt.step(run.gfn_params, grad)

    loss_q = math.nan
    for _ in range(cfg.q_updates):
        loss_q, grad = q_loss(cfg.q, run.q_spec, run.q_params, run.target_params, env, trajs)
        if not math.isfinite(loss_q):
            raise TrainingDiverged(f"non-finite action-value loss at step {run.step}")
        run.q_opt.step(run.q_params, grad)
    if cfg.q_updates:
        ema_update(run.target_params, run.q_params, cfg.q.tau)

    run.mode_tracker.update(
        (t.states[-1].tokens, t.terminal_reward) for t in trajs
    )
    record = {
        "schema_version": SCHEMA_VERSION,
        "step": run.step,
        "mean_reward": float(np.mean([t.terminal_reward for t in trajs])),
        "modes": run.mode_tracker.count,
        "loss_tb": loss_gfn,
        "loss_q": loss_q,
        "p": p,
        "wall_ms": 0.0,
    }
    run.step += 1
    return record


def train(env: Env, cfg: TrainConfig, hidden=(64, 64), out_dir=None,
          resume_from=None) -> tuple[RunState, list[dict]]:
    """Run the full loop; emit metrics.jsonl / checkpoint.json / summary.json.

    ``resume_from`` restores a checkpoint and continues to ``cfg.iterations``.
    With ``out_dir=None`` nothing is written and the records are only returned.
    """
    if resume_from is not None:
        run = load_checkpoint(resume_from)
    else:
        run = init_run(env, cfg, hidden=hidden)
    records: list[dict] = []
    writer = None
    t0 = time.perf_counter()
    if out_dir is not None:
        import os

        os.makedirs(out_dir, exist_ok=True)
        writer = MetricsWriter(f"{out_dir}/metrics.jsonl")
    try:
        while run.step < run.cfg.iterations:
            step_t0 = time.perf_counter()
            try:
                record = train_step(run)
            except (TrainingDiverged, FloatingPointError) as exc:
                if out_dir is not None:
                    save_checkpoint(run, f"{out_dir}/checkpoint.diverged.json")
                raise TrainingDiverged(str(exc)) from exc
            if run.cfg.log_wall_time:
                record["wall_ms"] = (time.perf_counter() - step_t0) * 1e3
            records.append(record)
            if writer is not None:
                writer.write(record)
            if (
                out_dir is not None
                and run.cfg.checkpoint_every
                and run.step % run.cfg.checkpoint_every == 0
            ):
                save_checkpoint(run, f"{out_dir}/checkpoint.json")
    finally:
        if writer is not None:
            writer.close()
    if out_dir is not None:
        save_checkpoint(run, f"{out_dir}/checkpoint.json")
        summary = {
            "schema_version": SCHEMA_VERSION,
            "kind": "summary",
            "iterations": run.step,
            "modes": run.mode_tracker.count,
            "final_p": run.current_p(),
            "mean_reward_last_100": float(
                np.mean([r["mean_reward"] for r in records[-100:]])
            ) if records else math.nan,
            "total_wall_ms": (time.perf_counter() - t0) * 1e3,
            "config": train_config_to_dict(run.cfg),
            "env": env_spec_to_dict(run.env.spec),
        }
        with open(f"{out_dir}/summary.json", "w") as f:
            json.dump(summary, f, indent=2)
    return run, records


# ---------------------------------------------------------------------------
# Inference-time sweeps and probes (all with exploration off)

def inference_sweep(run: RunState, cells, samples_per_cell: int = 512,
                    seed: int = 0, similarity_top_k: int = 100) -> list[dict]:
    """Sample ``samples_per_cell`` trajectories for each (variant, p) cell.

    Every cell restarts from the same seed, so cells that induce the same
    behavior policy produce identical statistics.
    """
    env = run.env
    rows = []
    for variant, p in cells:
        if variant.kind == "gfn_then_q" and variant.max_steps == 0:
            variant = replace(variant, max_steps=env.max_trajectory_length)
        rng = np.random.default_rng(seed)
        trajs = sample_batch(run, samples_per_cell, variant=variant, p=p,
                             epsilon=0.0, rng=rng)
        rewards = [t.terminal_reward for t in trajs]
        objects = [t.states[-1].tokens for t in trajs]
        tracker = ModeTracker(
            reward_threshold=env.mode_reward_threshold(),
            distance_threshold=env.spec.mode_edit_threshold,
        )
        tracker.update(zip(objects, rewards))
        rows.append({
            "variant": variant.kind,
            "p": p,
            "mean_reward": float(np.mean(rewards)),
            "mean_similarity": mean_pairwise_similarity(
                objects, rewards, env.spec.max_len, top_k=similarity_top_k
            ),
            "modes": tracker.count,
        })
    return rows


def _rollout_from(run: RunState, start: State, first_action: int | None,
                  variant: MixVariant, p: float, rng) -> float:
    """Reward of one rollout from ``start`` under the inference policy."""
    env = run.env
    s = start
    step = 0
    while not s.terminal:
        if step == 0 and first_action is not None:
            a = first_action
        else:
            pf, qv, masks = policy_heads(run, [s])
            dist = mu_distribution(variant, p, pf[0], qv[0], masks[0],
                                   step=step, guard=run.guard)
            a = sample_action(dist, rng, 0.0)
        s = env.apply(s, a)
        step += 1
    return env.reward(s)[0]


def probe_q_calibration(run: RunState, n_states: int = 64, rollouts: int = 512,
                        variant: MixVariant | None = None, p: float | None = None,
                        seed: int = 0, q_fn=None) -> dict:
    """Compare Q predictions with empirical reward-to-go estimates.

    Samples ``n_states`` trajectories, picks one pre-terminal state from each,
    draws the behavior policy's first action there, then estimates its return
    by ``rollouts`` fresh continuations.  ``q_fn`` (state -> action values)
    defaults to the trained network and exists so exact tables can stand in.
    """
    cfg = run.cfg
    variant = variant if variant is not None else cfg.variant
    p = p if p is not None else run.current_p()
    rng = np.random.default_rng(seed)
    trajs = sample_batch(run, n_states, variant=variant, p=p, epsilon=0.0, rng=rng)

    if q_fn is None:
        def q_fn(state):
            _, qv, _ = policy_heads(run, [state])
            return qv[0]

    records = []
    for traj in trajs:
        idx = int(rng.integers(len(traj)))
        s = traj.states[idx]
        pf, qv, masks = policy_heads(run, [s])
        dist = mu_distribution(variant, p, pf[0], qv[0], masks[0],
                               step=idx, guard=run.guard)
        a_star = sample_action(dist, rng, 0.0)
        rewards = np.array([
            _rollout_from(run, s, a_star, variant, p, rng) for _ in range(rollouts)
        ])
        stderr = float(rewards.std(ddof=1) / math.sqrt(rollouts)) if rollouts > 1 else 0.0
        records.append({
            "object": run.env.decode(s),
            "action": a_star,
            "q_pred": float(q_fn(s)[a_star]),
            "q_hat": float(rewards.mean()),
            "stderr": stderr,
        })
    try:
        rho = spearman([r["q_pred"] for r in records], [r["q_hat"] for r in records])
    except ValueError:  # constant predictions or estimates (degenerate policies)
        rho = math.nan
    return {"schema_version": SCHEMA_VERSION, "kind": "calibration",
            "p": p, "variant": variant.kind, "records": records, "spearman": rho}


def probe_changed_p(run: RunState, p_train: float, p_grid, n_states: int = 64,
                    rollouts: int = 512, variant: MixVariant | None = None,
                    seed: int = 0) -> dict:
    """Calibration measurement under policies greedier/softer than trained.

    For each probe value, rollouts follow the p' policy while predictions come
    from the Q trained at ``p_train``; the lower-bound rate is the fraction of
    probed pairs with q_pred <= q_hat + 3 * stderr.
    """
    rows = []
    for p_prime in p_grid:
        cal = probe_q_calibration(run, n_states=n_states, rollouts=rollouts,
                                  variant=variant, p=p_prime, seed=seed)
        recs = cal["records"]
        lb = np.mean([
            r["q_pred"] <= r["q_hat"] + 3.0 * r["stderr"] for r in recs
        ])
        rows.append({
            "p_prime": p_prime,
            "spearman": cal["spearman"],
            "lower_bound_rate": float(lb),
        })
    return {"schema_version": SCHEMA_VERSION, "kind": "changed_p",
            "p_train": p_train, "rows": rows}


NORMAL = "normal"
BEST_PRUNED = "best_pruned"
BEST_ACTIONS = "best_actions"
PROBE_PURE_PF = "pure_pf"
PRUNE_REGIMES = (NORMAL, BEST_PRUNED, BEST_ACTIONS, PROBE_PURE_PF)


def probe_pruned_actions(run: RunState, regime: str, samples: int = 512,
                         p: float | None = None, t_lo: int | None = None,
                         t_hi: int | None = None, seed: int = 0) -> list[float]:
    """Reward distribution when deliberately taking (or avoiding) pruned actions.

    ``normal`` samples the value-masked policy; ``best_pruned`` switches after
    a random number of steps to the most pf-probable action among those the
    mask would remove (falling back to the overall pf-argmax when nothing is
    masked); ``best_actions`` switches to the pf-argmax outright; ``pure_pf``
    ignores values entirely.
    """
    if regime not in PRUNE_REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {PRUNE_REGIMES}")
    env = run.env
    p = p if p is not None else run.current_p()
    t_lo = t_lo if t_lo is not None else 2
    t_hi = t_hi if t_hi is not None else max(t_lo, env.max_trajectory_length - 2)
    variant = MixVariant(P_OF_MAX)
    rng = np.random.default_rng(seed)
    rewards = []
    for _ in range(samples):
        switch = int(rng.integers(t_lo, t_hi + 1)) if regime in (BEST_PRUNED, BEST_ACTIONS) else -1
        s = env.initial_state()
        step = 0
        while not s.terminal:
            pf, qv, masks = policy_heads(run, [s])
            valid = np.flatnonzero(masks[0])
            if regime == PROBE_PURE_PF:
                dist = mu_distribution(MixVariant(PURE_PF), 0.0, pf[0], qv[0], masks[0])
                a = sample_action(dist, rng, 0.0)
            elif regime in (BEST_PRUNED, BEST_ACTIONS) and step >= switch:
                pruned = pofmax_pruned(np.asarray(qv[0][valid]), p, run.guard)
                if regime == BEST_PRUNED and pruned.any():
                    cand = valid[pruned]
                else:
                    cand = valid
                a = int(cand[np.argmax(pf[0][cand])])
            else:
                dist = mu_distribution(variant, p, pf[0], qv[0], masks[0],
                                       step=step, guard=run.guard)
                a = sample_action(dist, rng, 0.0)
            s = env.apply(s, a)
            step += 1
        rewards.append(env.reward(s)[0])
    return rewards


# ---------------------------------------------------------------------------
# Checkpointing (JSON; float lists round-trip exactly)

def env_spec_to_dict(spec: EnvSpec) -> dict:
    return {
        "variant": spec.variant,
        "max_len": spec.max_len,
        "vocab": list(spec.vocab),
        "references": list(spec.references),
        "mode_edit_threshold": spec.mode_edit_threshold,
        "beta": spec.beta,
        "reward_floor": spec.reward_floor,
    }


def env_spec_from_dict(d: dict) -> EnvSpec:
    return EnvSpec(
        variant=d["variant"],
        max_len=d["max_len"],
        vocab=tuple(d["vocab"]),
        references=tuple(d["references"]),
        mode_edit_threshold=d["mode_edit_threshold"],
        beta=d["beta"],
        reward_floor=d["reward_floor"],
    )


def variant_to_dict(v: MixVariant) -> dict:
    return {"kind": v.kind, "temperature": v.temperature,
            "soft_mix": v.soft_mix, "max_steps": v.max_steps}


def variant_from_dict(d: dict) -> MixVariant:
    return MixVariant(**d)


def schedule_to_dict(s: PSchedule) -> dict:
    return {"kind": s.kind, "final_p": s.final_p,
            "total_steps": s.total_steps, "step_count": s.step_count}


def schedule_from_dict(d: dict) -> PSchedule:
    return PSchedule(**d)


def q_config_to_dict(q: QConfig) -> dict:
    return {
        "n_step": q.n_step, "gamma": q.gamma, "tau": q.tau, "epsilon": q.epsilon,
        "loss_kind": q.loss_kind, "bootstrap": q.bootstrap,
        "beta_scaled_targets": q.beta_scaled_targets, "huber_delta": q.huber_delta,
    }


def gfn_config_to_dict(g: GfnConfig) -> dict:
    return {"objective": g.objective, "subtb_lambda": g.subtb_lambda,
            "uniform_pb": g.uniform_pb}


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "iterations": cfg.iterations,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "lr_log_z": cfg.lr_log_z,
        "q_lr": cfg.q_lr,
        "seed": cfg.seed,
        "variant": variant_to_dict(cfg.variant),
        "p_schedule": schedule_to_dict(cfg.p_schedule),
        "q": q_config_to_dict(cfg.q),
        "gfn": gfn_config_to_dict(cfg.gfn),
        "workers": cfg.workers,
        "gfn_updates": cfg.gfn_updates,
        "q_updates": cfg.q_updates,
        "checkpoint_every": cfg.checkpoint_every,
        "log_wall_time": cfg.log_wall_time,
    }


def train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["variant"] = variant_from_dict(d["variant"])
    d["p_schedule"] = schedule_from_dict(d["p_schedule"])
    d["q"] = QConfig(**d["q"])
    d["gfn"] = GfnConfig(**d["gfn"])
    return TrainConfig(**d)


def save_checkpoint(run: RunState, path) -> None:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "kind": "checkpoint",
        "step": run.step,
        "env": env_spec_to_dict(run.env.spec),
        "hidden": list(run.hidden),
        "train": train_config_to_dict(run.cfg),
        "gfn_params": nets.params_to_dict(run.gfn_params),
        "q_params": nets.params_to_dict(run.q_params),
        "target_params": nets.params_to_dict(run.target_params),
        "gfn_opt": run.gfn_opt.state_dict(),
        "q_opt": run.q_opt.state_dict(),
        "rng_state": run.rng.bit_generator.state,
        "mode_tracker": run.mode_tracker.state_dict(),
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_checkpoint(path) -> RunState:
    with open(path) as f:
        payload = json.load(f)
    if payload.get("kind") != "checkpoint":
        raise ValueError(f"{path} is not a checkpoint file")
    env = build_env(env_spec_from_dict(payload["env"]))
    cfg = train_config_from_dict(payload["train"])
    hidden = tuple(payload["hidden"])
    gfn_spec, q_spec = make_specs(env, hidden)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = payload["rng_state"]
    return RunState(
        env=env,
        cfg=cfg,
        hidden=hidden,
        gfn_spec=gfn_spec,
        q_spec=q_spec,
        gfn_params=nets.params_from_dict(payload["gfn_params"]),
        q_params=nets.params_from_dict(payload["q_params"]),
        target_params=nets.params_from_dict(payload["target_params"]),
        gfn_opt=nets.Adam.from_state_dict(gfn_spec, payload["gfn_opt"]),
        q_opt=nets.Adam.from_state_dict(q_spec, payload["q_opt"]),
        rng=rng,
        mode_tracker=ModeTracker.from_state_dict(payload["mode_tracker"]),
        step=payload["step"],
    )
