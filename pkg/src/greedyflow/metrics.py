"""Run statistics: online mode discovery, diversity, rank correlation.

A "mode" is a terminal object whose reward clears a threshold and whose edit
distance to every previously accepted mode is strictly greater than the
separation threshold; acceptance is greedy in arrival order.  Similarity
between two objects of a length-n task is ``1 - d/n`` with d the Levenshtein
distance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np
from scipy import stats

from .seqdist import levenshtein_many


@dataclass
class ModeTracker:
    reward_threshold: float
    distance_threshold: int
    accepted: list[tuple[int, ...]] = field(default_factory=list)

    def __post_init__(self):
        # Accepted modes grouped by length so distance checks run batched.
        self._by_len: dict[int, list[tuple[int, ...]]] = {}
        self._stacked: dict[int, np.ndarray | None] = {}
        for m in self.accepted:
            self._by_len.setdefault(len(m), []).append(m)
            self._stacked[len(m)] = None

    def offer(self, tokens: tuple[int, ...], reward: float) -> bool:
        if reward < self.reward_threshold:
            return False
        x = np.asarray(tokens, dtype=np.int64)[None, :]
        for length, group in self._by_len.items():
            stacked = self._stacked[length]
            if stacked is None:
                stacked = np.asarray(group, dtype=np.int64).reshape(len(group), length)
                self._stacked[length] = stacked
            if levenshtein_many(x, stacked).min() <= self.distance_threshold:
                return False
        self._accept(tuple(tokens))
        return True

    def _accept(self, tokens: tuple[int, ...]) -> None:
        self.accepted.append(tokens)
        self._by_len.setdefault(len(tokens), []).append(tokens)
        self._stacked[len(tokens)] = None

    def update(self, candidates) -> int:
        """Greedy pass over (tokens, reward) pairs; returns how many were accepted.

        Distances to the already-accepted set and among the batch's own
        eligible candidates are evaluated in bulk, then acceptance replays the
        arrival order.
        """
        elig = []
        seen_first: dict[tuple[int, ...], int] = {}
        for tokens, reward in candidates:
            tokens = tuple(tokens)
            if reward < self.reward_threshold:
                continue
            if tokens in seen_first:  # duplicate of an earlier candidate
                continue
            seen_first[tokens] = len(elig)
            elig.append(tokens)
        if not elig:
            return 0

        near_existing = np.zeros(len(elig), dtype=bool)
        for length, group in self._by_len.items():
            stacked = self._stacked[length]
            if stacked is None:
                stacked = np.asarray(group, dtype=np.int64).reshape(len(group), length)
                self._stacked[length] = stacked
            d = self._cross_min(elig, stacked)
            near_existing |= d <= self.distance_threshold

        pair_d = self._pairwise(elig)
        added = 0
        kept: list[int] = []
        for i, tokens in enumerate(elig):
            if near_existing[i]:
                continue
            if any(pair_d[j, i] <= self.distance_threshold for j in kept):
                continue
            kept.append(i)
            self._accept(tokens)
            added += 1
        return added

    @staticmethod
    def _cross_min(items, stacked: np.ndarray) -> np.ndarray:
        """Min distance of each item to the rows of one equal-length block."""
        out = np.full(len(items), np.inf)
        by_len: dict[int, list[int]] = {}
        for i, t in enumerate(items):
            by_len.setdefault(len(t), []).append(i)
        n = stacked.shape[0]
        for length, idxs in by_len.items():
            xs = np.repeat(
                np.asarray([items[i] for i in idxs], dtype=np.int64).reshape(len(idxs), length),
                n, axis=0,
            )
            ys = np.tile(stacked, (len(idxs), 1))
            d = levenshtein_many(xs, ys).reshape(len(idxs), n).min(axis=1)
            out[idxs] = d
        return out

    @staticmethod
    def _pairwise(items) -> np.ndarray:
        n = len(items)
        out = np.zeros((n, n))
        ia, ib = np.triu_indices(n, k=1)
        if len(ia) == 0:
            return out
        lengths = np.asarray([len(t) for t in items])
        key = lengths[ia] * (lengths.max() + 1) + lengths[ib]
        for group in np.unique(key):
            sel = key == group
            a_sel, b_sel = ia[sel], ib[sel]
            xs = np.asarray([items[i] for i in a_sel], dtype=np.int64).reshape(len(a_sel), -1)
            ys = np.asarray([items[i] for i in b_sel], dtype=np.int64).reshape(len(b_sel), -1)
            d = levenshtein_many(xs, ys)
            out[a_sel, b_sel] = d
            out[b_sel, a_sel] = d
        return out

    @property
    def count(self) -> int:
        return len(self.accepted)

    def state_dict(self) -> dict:
        return {
            "reward_threshold": self.reward_threshold,
            "distance_threshold": self.distance_threshold,
            "accepted": [list(m) for m in self.accepted],
        }

    @classmethod
    def from_state_dict(cls, d: dict) -> "ModeTracker":
        return cls(
            reward_threshold=d["reward_threshold"],
            distance_threshold=d["distance_threshold"],
            accepted=[tuple(m) for m in d["accepted"]],
        )


def mean_pairwise_similarity(objects, rewards, max_len: int, top_k: int | None = None) -> float:
    """Mean over unordered pairs of 1 - d/max_len, over the top-k by reward."""
    if len(objects) < 2:
        raise ValueError("need at least two objects")
    objects = [tuple(o) for o in objects]
    if top_k is not None and top_k < len(objects):
        order = np.argsort(np.asarray(rewards))[::-1][:top_k]
        objects = [objects[i] for i in order]
    n = len(objects)
    idx_a, idx_b = np.triu_indices(n, k=1)
    # Batch the DP per (len, len) pair group; lengths vary in stop-action tasks.
    lengths = np.asarray([len(o) for o in objects])
    total = 0.0
    key = lengths[idx_a] * (lengths.max() + 1) + lengths[idx_b]
    for group in np.unique(key):
        sel = key == group
        a_sel = idx_a[sel]
        b_sel = idx_b[sel]
        xs = np.asarray([objects[i] for i in a_sel], dtype=np.int64).reshape(len(a_sel), -1)
        ys = np.asarray([objects[i] for i in b_sel], dtype=np.int64).reshape(len(b_sel), -1)
        d = levenshtein_many(xs, ys)
        total += float(np.sum(1.0 - d / max_len))
    return total / len(idx_a)


def spearman(xs, ys) -> float:
    """Rank correlation with average ranks for ties; rejects degenerate input."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if len(xs) != len(ys) or len(xs) < 3:
        raise ValueError("need two equal-length sequences of at least 3 values")
    if np.all(xs == xs[0]) or np.all(ys == ys[0]):
        raise ValueError("rank correlation is undefined for constant input")
    rho = stats.spearmanr(xs, ys).statistic
    return float(rho)


class MetricsWriter:
    """Append-only JSONL emitter with a stable key order per record."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_jsonl(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
