"""Behavior policies built from a forward policy and learned action values.

``mu_distribution`` combines the sampler's action probabilities ``pf`` with
action-value estimates ``q`` under one of several mixing rules, all modulated
by a greediness knob ``p`` in [0, 1]:

* ``p_greedy``     -- follow pf, but with probability p take the Q-argmax;
* ``p_quantile``   -- drop the floor(p*A) lowest-Q actions, renormalise pf;
* ``p_of_max``     -- drop actions whose Q falls below p times the best Q;
* ``p_thresh``     -- drop actions whose Q falls below the absolute value p;
* ``soft_q``       -- softmax(q / T), ignoring pf;
* ``soft_q_mixed`` -- an even blend of pf and the soft-Q policy;
* ``gfn_then_q``   -- pf for the first round(N*p) steps, then Q-greedy;
* ``greedy_q``     -- always the Q-argmax;
* ``pure_pf``      -- pf untouched.

Q values are clipped at zero before any rule runs, and every pruning rule
keeps the Q-argmax action alive, so the result is always a proper
distribution over the valid actions.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

PURE_PF = "pure_pf"
P_GREEDY = "p_greedy"
P_QUANTILE = "p_quantile"
P_OF_MAX = "p_of_max"
P_THRESH = "p_thresh"
SOFT_Q = "soft_q"
SOFT_Q_MIXED = "soft_q_mixed"
GFN_THEN_Q = "gfn_then_q"
GREEDY_Q = "greedy_q"

VARIANT_KINDS = (
    PURE_PF, P_GREEDY, P_QUANTILE, P_OF_MAX, P_THRESH,
    SOFT_Q, SOFT_Q_MIXED, GFN_THEN_Q, GREEDY_Q,
)

# Variants whose distribution reduces exactly to pf at p = 0.
REDUCES_TO_PF_AT_ZERO = (PURE_PF, P_GREEDY, P_QUANTILE, P_OF_MAX, P_THRESH)

CONSTANT = "constant"
COSINE = "cosine"
STEPWISE = "stepwise"


@dataclass(frozen=True)
class MixVariant:
    kind: str = PURE_PF
    temperature: float = 1.0   # soft-Q variants
    soft_mix: float = 0.5      # blend weight for soft_q_mixed
    max_steps: int = 0         # trajectory-length base N for gfn_then_q

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"unknown variant kind {self.kind!r}")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.soft_mix <= 1.0:
            raise ValueError("soft_mix must lie in [0, 1]")


@dataclass(frozen=True)
class PSchedule:
    kind: str = CONSTANT
    final_p: float = 0.0
    total_steps: int = 1500   # cosine half-period
    step_count: int = 500     # stepwise switch point

    def __post_init__(self):
        if self.kind not in (CONSTANT, COSINE, STEPWISE):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 <= self.final_p <= 1.0:
            raise ValueError("final_p must lie in [0, 1]")
        if self.total_steps <= 0 or self.step_count <= 0:
            raise ValueError("schedule lengths must be positive")


@dataclass(frozen=True)
class MaskGuard:
    q_clip_min: float = 0.0
    pofmax_activation_threshold: float = 1e-5


DEFAULT_GUARD = MaskGuard()


def schedule_value(sched: PSchedule, step: int) -> float:
    if step < 0:
        raise ValueError("step must be non-negative")
    if sched.kind == CONSTANT:
        return sched.final_p
    if sched.kind == COSINE:
        frac = min(step, sched.total_steps) / sched.total_steps
        return sched.final_p * (1.0 - math.cos(math.pi * frac)) / 2.0
    return sched.final_p if step >= sched.step_count else 0.0


def pofmax_pruned(q_valid: np.ndarray, p: float, guard: MaskGuard = DEFAULT_GUARD) -> np.ndarray:
    """Boolean prune set of the value-ratio rule over the valid actions.

    Clips values at the guard minimum first; returns all-False while
    ``p * max(q)`` is still under the activation threshold, and never prunes
    the argmax.
    """
    qv = np.maximum(np.asarray(q_valid, dtype=np.float64), guard.q_clip_min)
    threshold = p * qv.max()
    if threshold <= guard.pofmax_activation_threshold:
        return np.zeros(len(qv), dtype=bool)
    pruned = qv < threshold
    pruned[int(np.argmax(qv))] = False
    return pruned


def _renormalized(pf, keep, valid, argmax_pos, size):
    """pf restricted to valid[keep]; falls back to the argmax if mass vanishes."""
    out = np.zeros(size)
    mass = pf[keep].sum()
    if mass <= 0.0:
        out[valid[argmax_pos]] = 1.0
        return out
    out[valid[keep]] = pf[keep] / mass
    return out


def mu_distribution(variant: MixVariant, p: float, pf_probs, q, valid_mask,
                    step: int = 0, guard: MaskGuard = DEFAULT_GUARD) -> np.ndarray:
    """Behavior distribution over the full action space; zero off the valid set."""
    pf_probs = np.asarray(pf_probs, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    valid_mask = np.asarray(valid_mask, dtype=bool)
    valid = np.flatnonzero(valid_mask)
    if valid.size == 0:
        raise ValueError("no valid actions")
    size = len(valid_mask)
    pf = pf_probs[valid]
    qv = np.maximum(q[valid], guard.q_clip_min)
    amax = int(np.argmax(qv))
    a_count = valid.size

    out = np.zeros(size)
    kind = variant.kind
    if kind == PURE_PF:
        out[valid] = pf
        return out
    if kind == GREEDY_Q:
        out[valid[amax]] = 1.0
        return out
    if kind == P_GREEDY:
        out[valid] = (1.0 - p) * pf
        out[valid[amax]] += p
        return out
    if kind == P_QUANTILE:
        k = int(math.floor(p * a_count))
        if k <= 0:
            out[valid] = pf
            return out
        order = np.sort(qv)
        threshold = order[k] if k < a_count else order[-1]
        keep = qv >= threshold  # ties at the threshold survive; argmax always does
        return _renormalized(pf, keep, valid, amax, size)
    if kind == P_OF_MAX:
        pruned = pofmax_pruned(qv, p, guard)
        if not pruned.any():
            out[valid] = pf
            return out
        return _renormalized(pf, ~pruned, valid, amax, size)
    if kind == P_THRESH:
        keep = qv >= p
        keep[amax] = True
        return _renormalized(pf, keep, valid, amax, size)
    if kind in (SOFT_Q, SOFT_Q_MIXED):
        z = qv / variant.temperature
        z -= z.max()
        soft = np.exp(z)
        soft /= soft.sum()
        if kind == SOFT_Q:
            out[valid] = soft
        else:
            out[valid] = (1.0 - variant.soft_mix) * pf + variant.soft_mix * soft
        return out
    # gfn_then_q: sample from pf for the first round(N*p) steps, then greedily
    switch = round(variant.max_steps * p)
    if step < switch:
        out[valid] = pf
    else:
        out[valid[amax]] = 1.0
    return out


def mu_distribution_batch(variant: MixVariant, p: float, pf: np.ndarray, q: np.ndarray,
                          valid_mask: np.ndarray, step: int = 0,
                          guard: MaskGuard = DEFAULT_GUARD) -> np.ndarray:
    """Vectorised ``mu_distribution`` over a (B, A) batch; identical output row
    for row (the sampler hot path; the scalar version stays the reference)."""
    pf = np.asarray(pf, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mask = np.asarray(valid_mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise ValueError("a row has no valid actions")
    b, a_size = mask.shape
    kind = variant.kind

    if kind == PURE_PF or (kind == GFN_THEN_Q and step < round(variant.max_steps * p)):
        return np.where(mask, pf, 0.0)

    qc = np.where(mask, np.maximum(q, guard.q_clip_min), -np.inf)
    amax = np.argmax(qc, axis=1)
    rows = np.arange(b)

    if kind in (GREEDY_Q, GFN_THEN_Q):
        out = np.zeros((b, a_size))
        out[rows, amax] = 1.0
        return out
    if kind == P_GREEDY:
        out = np.where(mask, (1.0 - p) * pf, 0.0)
        out[rows, amax] += p
        return out
    if kind in (SOFT_Q, SOFT_Q_MIXED):
        z = qc / variant.temperature
        z -= z.max(axis=1, keepdims=True)
        soft = np.where(mask, np.exp(z), 0.0)
        soft /= soft.sum(axis=1, keepdims=True)
        if kind == SOFT_Q:
            return soft
        return np.where(mask, (1.0 - variant.soft_mix) * pf + variant.soft_mix * soft, 0.0)

    # Pruning family: build a keep matrix, renormalise pf over the survivors.
    if kind == P_QUANTILE:
        counts = mask.sum(axis=1)
        k = np.floor(p * counts).astype(np.int64)
        order = np.sort(np.where(mask, qc, np.inf), axis=1)
        idx = np.minimum(k, counts - 1)
        threshold = np.take_along_axis(order, idx[:, None], axis=1)[:, 0]
        keep = qc >= threshold[:, None]
        keep[k <= 0] = mask[k <= 0]
    elif kind == P_OF_MAX:
        threshold = p * qc[rows, amax]
        keep = qc >= threshold[:, None]
        keep[rows, amax] = True
        inactive = threshold <= guard.pofmax_activation_threshold
        keep[inactive] = mask[inactive]
    elif kind == P_THRESH:
        keep = qc >= p
        keep[rows, amax] = True
    else:
        raise ValueError(f"unknown variant kind {kind!r}")
    keep &= mask
    out = np.where(keep, pf, 0.0)
    mass = out.sum(axis=1)
    dead = mass <= 0.0
    if dead.any():
        out[dead] = 0.0
        out[rows[dead], amax[dead]] = 1.0
        mass[dead] = 1.0
    return out / mass[:, None]


def sample_action_batch(dists: np.ndarray, rng: np.random.Generator,
                        epsilon: float = 0.0, valid_masks=None) -> np.ndarray:
    """One categorical draw per row; epsilon explores the valid set (or the
    support when no masks are supplied)."""
    dists = np.asarray(dists, dtype=np.float64)
    b, a_size = dists.shape
    cdf = np.cumsum(dists, axis=1)
    u = rng.random(b) * cdf[:, -1]
    actions = (u[:, None] >= cdf).sum(axis=1)
    actions = np.minimum(actions, a_size - 1)
    # float-boundary draws can land on zero-mass entries; push to the argmax
    bad = dists[np.arange(b), actions] <= 0.0
    if bad.any():
        actions[bad] = np.argmax(dists[bad], axis=1)
    if epsilon > 0.0:
        explore = rng.random(b) < epsilon
        if explore.any():
            pool = (dists > 0.0) if valid_masks is None else np.asarray(valid_masks, dtype=bool)
            counts = pool.sum(axis=1)
            pick = np.floor(rng.random(b) * counts).astype(np.int64) + 1
            chosen = (np.cumsum(pool, axis=1) < pick[:, None]).sum(axis=1)
            actions = np.where(explore, chosen, actions)
    return actions


def sample_action(dist, rng: np.random.Generator, epsilon: float = 0.0,
                  valid_mask=None) -> int:
    """Draw an action; with probability epsilon pick uniformly at random.

    The epsilon branch is uniform over the full valid set when a mask is
    given (exploration must be able to leave the pruned support), otherwise
    over the distribution's support.
    """
    dist = np.asarray(dist, dtype=np.float64)
    support = np.flatnonzero(dist > 0.0)
    if support.size == 0:
        raise ValueError("distribution has empty support")
    if epsilon > 0.0 and rng.random() < epsilon:
        pool = np.flatnonzero(valid_mask) if valid_mask is not None else support
        return int(pool[rng.integers(pool.size)])
    cdf = np.cumsum(dist)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= len(dist) or dist[idx] <= 0.0:
        idx = int(support[-1])
    return idx
