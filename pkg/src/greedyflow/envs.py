"""Constructive-generation environments as pointed DAGs.

States are partially-built token sequences; actions are additive edits
(prepend/append/stop).  Three environments are provided:

* ``TwoDoors`` -- the two-room illustration: left room hides 100 unit-reward
  doors, the right room a single door worth 100.
* ``PrependAppendBits`` -- fixed-length bit strings grown from either end;
  reaching full length terminates the episode.
* ``StringLandscape`` -- variable-length strings over a small alphabet with an
  explicit stop action allowed from length 1.

Both sequence tasks score a finished string x as
``R(x) = exp(1 - min_y d(x, y) / max_len)`` against a reference set, where d
is the Levenshtein distance.  Every environment operation is a pure function
of (spec, state), so instances are safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np

from .seqdist import levenshtein_many

TWO_DOORS = "two_doors"
PREPEND_APPEND_BITS = "prepend_append_bits"
STRING_LANDSCAPE = "string_landscape"

VARIANTS = (TWO_DOORS, PREPEND_APPEND_BITS, STRING_LANDSCAPE)

# TwoDoors geometry: room 0 hides N_SIDE_DOORS unit rewards, room 1 one big one.
N_SIDE_DOORS = 100
BIG_REWARD = 100.0

DEFAULT_STATE_CAP = 10**6


@dataclass(frozen=True)
class State:
    """A partially constructed object: token ids plus a terminal flag."""

    tokens: tuple[int, ...]
    terminal: bool = False

    def __hash__(self):  # memoised; states are dict keys on every hot path
        h = self.__dict__.get("_hash")
        if h is None:
            h = hash((self.tokens, self.terminal))
            object.__setattr__(self, "_hash", h)
        return h


@dataclass(frozen=True)
class EnvSpec:
    """Immutable description of one environment instance.

    ``vocab`` and ``references`` apply to the sequence environments only;
    references must have full length ``max_len``.  ``beta`` is the reward
    sharpening exponent and ``mode_edit_threshold`` the mode-separation
    distance delta.
    """

    variant: str
    max_len: int
    vocab: tuple[str, ...] = ()
    references: tuple[str, ...] = ()
    mode_edit_threshold: int = 0
    beta: float = 1.0
    reward_floor: float = 1e-6

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.max_len <= 0:
            raise ValueError("max_len must be positive")
        if self.beta < 1.0:
            raise ValueError("beta must be >= 1")
        if self.reward_floor <= 0.0:
            raise ValueError("reward_floor must be positive")
        if self.variant != TWO_DOORS:
            if not self.vocab:
                raise ValueError("sequence environments need a non-empty vocab")
            if len(set(self.vocab)) != len(self.vocab):
                raise ValueError("vocab tokens must be distinct")
            if any(len(t) != 1 for t in self.vocab):
                raise ValueError("vocab tokens must be single characters")
            if not self.references:
                raise ValueError("sequence environments need a non-empty reference set")
            for r in self.references:
                if len(r) != self.max_len:
                    raise ValueError(f"reference {r!r} must have full length {self.max_len}")
                if any(c not in self.vocab for c in r):
                    raise ValueError(f"reference {r!r} contains tokens outside the vocab")
            if not (0 <= self.mode_edit_threshold < self.max_len):
                raise ValueError("mode_edit_threshold must lie in [0, max_len)")


class Env:
    """Shared interface for the three concrete environments."""

    spec: EnvSpec
    action_space_size: int
    max_trajectory_length: int
    token_width: int  # one-hot width per sequence position in encode()

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        # Per-state memo tables; states recur heavily during training.
        self._enc_cache: dict[State, np.ndarray] = {}
        self._mask_cache: dict[State, np.ndarray] = {}
        self._nparents_cache: dict[State, int] = {}
        self._child_cache: dict[tuple[State, int], State] = {}
        self._s0 = State(tokens=())

    def initial_state(self) -> State:
        return self._s0

    def apply_cached(self, s: State, a: int) -> State:
        """apply() with interning, so repeated states share one object."""
        key = (s, a)
        child = self._child_cache.get(key)
        if child is None:
            child = self.apply(s, a)
            self._child_cache[key] = child
        return child

    def valid_actions(self, s: State) -> list[int]:
        raise NotImplementedError

    def apply(self, s: State, a: int) -> State:
        raise NotImplementedError

    def parents(self, s: State) -> list[tuple[State, int]]:
        raise NotImplementedError

    def reward(self, s: State) -> tuple[float, float]:
        """Raw reward R > 0 and beta-scaled log reward for a terminal state."""
        raise NotImplementedError

    def reward_batch(self, states) -> np.ndarray:
        """Raw rewards of a batch of terminal states."""
        return np.array([self.reward(s)[0] for s in states])

    def decode(self, s: State) -> str:
        raise NotImplementedError

    # Encoding layout: per-position token one-hots, then a length one-hot,
    # then the terminal flag.  Width is constant for a given spec.
    @property
    def encoding_width(self) -> int:
        return self.spec.max_len * self.token_width + (self.spec.max_len + 1) + 1

    def encode(self, s: State) -> np.ndarray:
        cached = self._enc_cache.get(s)
        if cached is None:
            x = np.zeros(self.encoding_width, dtype=np.float64)
            for pos, tok in enumerate(s.tokens):
                x[pos * self.token_width + tok] = 1.0
            x[self.spec.max_len * self.token_width + len(s.tokens)] = 1.0
            if s.terminal:
                x[-1] = 1.0
            x.setflags(write=False)
            self._enc_cache[s] = cached = x
        return cached

    def encode_batch(self, states) -> np.ndarray:
        return np.stack([self.encode(s) for s in states])

    def valid_mask(self, s: State) -> np.ndarray:
        cached = self._mask_cache.get(s)
        if cached is None:
            m = np.zeros(self.action_space_size, dtype=bool)
            m[self.valid_actions(s)] = True
            m.setflags(write=False)
            self._mask_cache[s] = cached = m
        return cached

    def n_parent_edges(self, s: State) -> int:
        cached = self._nparents_cache.get(s)
        if cached is None:
            self._nparents_cache[s] = cached = len(self.parents(s))
        return cached

    def mode_reward_threshold(self) -> float:
        raise NotImplementedError

    def _check_not_terminal(self, s: State) -> None:
        if s.terminal:
            raise ValueError("no valid actions at a terminal state")


class TwoDoors(Env):
    """Root with two rooms; room 0 has 100 doors worth 1, room 1 one worth 100.

    States are token paths: () root, (r,) a room, (r, d) a terminal leaf.
    Action ids index doors, so the action space has width ``N_SIDE_DOORS``.
    """

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self.action_space_size = N_SIDE_DOORS
        self.max_trajectory_length = 2
        self.token_width = N_SIDE_DOORS

    def valid_actions(self, s: State) -> list[int]:
        self._check_not_terminal(s)
        if len(s.tokens) == 0:
            return [0, 1]
        if s.tokens == (0,):
            return list(range(N_SIDE_DOORS))
        return [0]  # right room has a single door

    def apply(self, s: State, a: int) -> State:
        if a not in self.valid_actions(s):
            raise ValueError(f"action {a} invalid at state {s}")
        tokens = s.tokens + (a,)
        return State(tokens=tokens, terminal=len(tokens) == 2)

    def parents(self, s: State) -> list[tuple[State, int]]:
        if len(s.tokens) == 0:
            raise ValueError("initial state has no parents")
        return [(State(tokens=s.tokens[:-1]), s.tokens[-1])]

    def reward(self, s: State) -> tuple[float, float]:
        if not s.terminal:
            raise ValueError("reward is only defined at terminal states")
        r = BIG_REWARD if s.tokens[0] == 1 else 1.0
        r = max(r, self.spec.reward_floor)
        return r, self.spec.beta * math.log(r)

    def decode(self, s: State) -> str:
        if len(s.tokens) == 0:
            return "root"
        side = "L" if s.tokens[0] == 0 else "R"
        if len(s.tokens) == 1:
            return side
        return f"{side}{s.tokens[1]}"

    def mode_reward_threshold(self) -> float:
        return BIG_REWARD


class _SequenceEnv(Env):
    """Shared reward/decoding logic for the string-building environments."""

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        self.token_width = len(spec.vocab)
        self._tok_of = {c: i for i, c in enumerate(spec.vocab)}
        self._refs = tuple(tuple(self._tok_of[c] for c in r) for r in spec.references)
        self._refs_arr = np.asarray(self._refs, dtype=np.int64)
        self._reward_cache: dict[tuple[int, ...], float] = {}

    def _fill_reward_cache(self, token_groups: dict[int, list[tuple[int, ...]]]) -> None:
        n_refs = len(self._refs)
        for length, group in token_groups.items():
            xs = np.repeat(
                np.asarray(group, dtype=np.int64).reshape(len(group), length),
                n_refs, axis=0,
            )
            ys = np.tile(self._refs_arr, (len(group), 1))
            d = levenshtein_many(xs, ys).reshape(len(group), n_refs).min(axis=1)
            for t, dist in zip(group, d):
                r = math.exp(1.0 - dist / self.spec.max_len)
                self._reward_cache[t] = max(float(r), self.spec.reward_floor)

    def _reward_of(self, tokens: tuple[int, ...]) -> float:
        r = self._reward_cache.get(tokens)
        if r is None:
            self._fill_reward_cache({len(tokens): [tokens]})
            r = self._reward_cache[tokens]
        return r

    def reward(self, s: State) -> tuple[float, float]:
        if not s.terminal:
            raise ValueError("reward is only defined at terminal states")
        r = self._reward_of(s.tokens)
        return r, self.spec.beta * math.log(r)

    def reward_batch(self, states) -> np.ndarray:
        fresh: dict[int, list[tuple[int, ...]]] = {}
        queued = set()
        for s in states:
            if not s.terminal:
                raise ValueError("reward is only defined at terminal states")
            t = s.tokens
            if t not in self._reward_cache and t not in queued:
                queued.add(t)
                fresh.setdefault(len(t), []).append(t)
        if fresh:
            self._fill_reward_cache(fresh)
        return np.array([self._reward_cache[s.tokens] for s in states])

    def decode(self, s: State) -> str:
        return "".join(self.spec.vocab[t] for t in s.tokens)

    def parse(self, text: str) -> tuple[int, ...]:
        return tuple(self._tok_of[c] for c in text)

    def mode_reward_threshold(self) -> float:
        return math.exp(1.0 - self.spec.mode_edit_threshold / self.spec.max_len)


class PrependAppendBits(_SequenceEnv):
    """Grow a fixed-length string from either end.

    Action ids: ``t`` prepends vocab token t, ``V + t`` appends it.  The empty
    state only exposes the append ids (prepending and appending coincide
    there).  A state at full length is terminal; there is no stop action.
    """

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        v = len(spec.vocab)
        self.action_space_size = 2 * v
        self.max_trajectory_length = spec.max_len

    def valid_actions(self, s: State) -> list[int]:
        self._check_not_terminal(s)
        v = len(self.spec.vocab)
        if len(s.tokens) == 0:
            return list(range(v, 2 * v))
        return list(range(2 * v))

    def apply(self, s: State, a: int) -> State:
        if a not in self.valid_actions(s):
            raise ValueError(f"action {a} invalid at state {s}")
        v = len(self.spec.vocab)
        tokens = (a,) + s.tokens if a < v else s.tokens + (a - v,)
        return State(tokens=tokens, terminal=len(tokens) == self.spec.max_len)

    def parents(self, s: State) -> list[tuple[State, int]]:
        if len(s.tokens) == 0:
            raise ValueError("initial state has no parents")
        v = len(self.spec.vocab)
        if len(s.tokens) == 1:
            return [(State(tokens=()), v + s.tokens[0])]
        drop_first = State(tokens=s.tokens[1:])
        drop_last = State(tokens=s.tokens[:-1])
        return [(drop_first, s.tokens[0]), (drop_last, v + s.tokens[-1])]


class StringLandscape(_SequenceEnv):
    """Append-only strings with a stop action allowed from length 1.

    Action ids: ``t`` appends vocab token t, ``V`` stops.  Stopping produces a
    terminal copy of the current tokens; at full length only stop is valid.
    """

    def __init__(self, spec: EnvSpec):
        super().__init__(spec)
        v = len(spec.vocab)
        self.action_space_size = v + 1
        self.max_trajectory_length = spec.max_len + 1
        self._stop = v

    def valid_actions(self, s: State) -> list[int]:
        self._check_not_terminal(s)
        if len(s.tokens) == self.spec.max_len:
            return [self._stop]
        acts = list(range(len(self.spec.vocab)))
        if len(s.tokens) >= 1:
            acts.append(self._stop)
        return acts

    def apply(self, s: State, a: int) -> State:
        if a not in self.valid_actions(s):
            raise ValueError(f"action {a} invalid at state {s}")
        if a == self._stop:
            return State(tokens=s.tokens, terminal=True)
        return State(tokens=s.tokens + (a,))

    def parents(self, s: State) -> list[tuple[State, int]]:
        if s.terminal:
            return [(State(tokens=s.tokens), self._stop)]
        if len(s.tokens) == 0:
            raise ValueError("initial state has no parents")
        return [(State(tokens=s.tokens[:-1]), s.tokens[-1])]


def build_env(spec: EnvSpec) -> Env:
    spec.validate()
    if spec.variant == TWO_DOORS:
        return TwoDoors(spec)
    if spec.variant == PREPEND_APPEND_BITS:
        return PrependAppendBits(spec)
    return StringLandscape(spec)


def two_doors_spec(beta: float = 1.0) -> EnvSpec:
    return EnvSpec(variant=TWO_DOORS, max_len=2, beta=beta)


def default_bits_spec(max_len: int = 12, beta: float = 3.0, delta: int = 3) -> EnvSpec:
    """12-bit task defaults: 4 references made of three 4-bit words each."""
    words = ("0000", "1111", "1100", "0011")
    reps = max_len // 4
    refs = tuple(w * reps for w in words)
    return EnvSpec(
        variant=PREPEND_APPEND_BITS,
        max_len=max_len,
        vocab=("0", "1"),
        references=refs,
        mode_edit_threshold=delta,
        beta=beta,
    )


def default_landscape_spec(max_len: int = 8, beta: float = 3.0, delta: int = 2) -> EnvSpec:
    refs = ("ACGUACGU"[:max_len], "UUGGCCAA"[:max_len])
    return EnvSpec(
        variant=STRING_LANDSCAPE,
        max_len=max_len,
        vocab=("A", "C", "G", "U"),
        references=refs,
        mode_edit_threshold=delta,
        beta=beta,
    )


@dataclass
class OracleGraph:
    """Complete enumeration of an environment's DAG, topologically ordered.

    ``children[i]`` and ``parent_edges[i]`` list (action, neighbour index)
    resp. (parent index, action) pairs; parallel edges (same parent, different
    actions) are kept distinct.  ``terminal_reward`` maps terminal state
    indices to raw rewards.
    """

    env: Env
    states: list[State]
    index: dict[State, int]
    children: list[list[tuple[int, int]]]
    parent_edges: list[list[tuple[int, int]]]
    terminal_reward: dict[int, float] = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def terminal_indices(self) -> list[int]:
        return sorted(self.terminal_reward)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "n_states": self.n_states,
            "states": [
                {
                    "id": i,
                    "object": self.env.decode(s),
                    "terminal": s.terminal,
                    **({"reward": self.terminal_reward[i]} if s.terminal else {}),
                }
                for i, s in enumerate(self.states)
            ],
            "edges": [
                {"src": i, "action": a, "dst": j}
                for i, out in enumerate(self.children)
                for a, j in out
            ],
        }

    def dump(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)


def enumerate_states(env: Env, cap: int = DEFAULT_STATE_CAP) -> OracleGraph:
    """BFS the full DAG from the initial state.

    Raises ``ValueError`` once more than ``cap`` states are discovered.  The
    returned state list is in topological order (BFS layers only ever move
    from shorter to longer/terminal states in these environments).
    """
    s0 = env.initial_state()
    states = [s0]
    index = {s0: 0}
    children: list[list[tuple[int, int]]] = [[]]
    frontier = [0]
    while frontier:
        nxt = []
        for i in frontier:
            s = states[i]
            if s.terminal:
                continue
            for a in env.valid_actions(s):
                child = env.apply(s, a)
                j = index.get(child)
                if j is None:
                    j = len(states)
                    if j >= cap:
                        raise ValueError(f"state cap exceeded ({cap}); environment too large")
                    index[child] = j
                    states.append(child)
                    children.append([])
                    nxt.append(j)
                children[i].append((a, j))
        frontier = nxt

    parent_edges: list[list[tuple[int, int]]] = [[] for _ in states]
    for i, out in enumerate(children):
        for a, j in out:
            parent_edges[j].append((i, a))

    terminal_reward = {
        i: env.reward(s)[0] for i, s in enumerate(states) if s.terminal
    }
    return OracleGraph(
        env=env,
        states=states,
        index=index,
        children=children,
        parent_edges=parent_edges,
        terminal_reward=terminal_reward,
    )
