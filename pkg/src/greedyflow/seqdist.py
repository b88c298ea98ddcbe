"""Edit-distance utilities for token sequences.

All distances operate on tuples of integer token ids.  ``levenshtein`` is the
plain two-row DP reference; ``levenshtein_many`` vectorises the same DP over a
batch of pairs of equal-shape sequences, which is what the reward and
similarity hot paths use.
"""
from __future__ import annotations

import numpy as np


def levenshtein(a, b) -> int:
    """Levenshtein distance between two token sequences."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, start=1):
        cur = [i]
        for j, tb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ta != tb)))
        prev = cur
    return prev[-1]


def levenshtein_many(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Row-wise Levenshtein distance between two (P, La) / (P, Lb) int arrays.

    All rows in ``xs`` share one length, likewise ``ys``; variable-length
    callers group pairs by length pair first.
    """
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    if xs.ndim == 1:
        xs = xs[None, :]
    if ys.ndim == 1:
        ys = ys[None, :]
    p = max(xs.shape[0], ys.shape[0])
    if xs.shape[0] == 1 and p > 1:
        xs = np.broadcast_to(xs, (p, xs.shape[1]))
    if ys.shape[0] == 1 and p > 1:
        ys = np.broadcast_to(ys, (p, ys.shape[1]))
    la, lb = xs.shape[1], ys.shape[1]
    prev = np.broadcast_to(np.arange(lb + 1), (p, lb + 1)).astype(np.int64).copy()
    for i in range(1, la + 1):
        cur = np.empty_like(prev)
        cur[:, 0] = i
        sub = prev[:, :-1] + (xs[:, i - 1][:, None] != ys)
        dele = prev[:, 1:] + 1
        best = np.minimum(sub, dele)
        # insertion column depends on the previous column of cur; sequential
        for j in range(1, lb + 1):
            cur[:, j] = np.minimum(best[:, j - 1], cur[:, j - 1] + 1)
        prev = cur
    return prev[:, -1]


def min_distance_to_set(x, refs) -> int:
    """min over ``refs`` of the Levenshtein distance to ``x``."""
    return min(levenshtein(x, r) for r in refs)
