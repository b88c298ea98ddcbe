import itertools
import math

import numpy as np
import pytest

from greedyflow.envs import (
    EnvSpec,
    PREPEND_APPEND_BITS,
    STRING_LANDSCAPE,
    State,
    build_env,
    default_bits_spec,
    default_landscape_spec,
    enumerate_states,
    two_doors_spec,
)
from greedyflow.seqdist import levenshtein, levenshtein_many


def bits_spec(max_len, refs, delta=1, beta=1.0):
    return EnvSpec(
        variant=PREPEND_APPEND_BITS,
        max_len=max_len,
        vocab=("0", "1"),
        references=tuple(refs),
        mode_edit_threshold=delta,
        beta=beta,
    )


def landscape_spec(max_len, refs, delta=1, beta=1.0):
    return EnvSpec(
        variant=STRING_LANDSCAPE,
        max_len=max_len,
        vocab=("A", "C", "G", "U"),
        references=tuple(refs),
        mode_edit_threshold=delta,
        beta=beta,
    )


def all_children(env, s):
    """Brute-force oracle: every (action, child) reachable in one step."""
    return [(a, env.apply(s, a)) for a in env.valid_actions(s)]


def brute_force_parents(env, target):
    """Oracle for parents(): scan the whole enumerated DAG for edges into target."""
    graph = enumerate_states(env)
    hits = []
    for s in graph.states:
        if s.terminal:
            continue
        for a, child in all_children(env, s):
            if child == target:
                hits.append((s, a))
    return hits


class TestInitialState:
    def test_two_doors_root_has_two_actions(self):
        env = build_env(two_doors_spec())
        s0 = env.initial_state()
        assert not s0.terminal
        assert env.valid_actions(s0) == [0, 1]

    def test_sequence_envs_start_empty(self):
        for spec in (bits_spec(4, ["0000"]), landscape_spec(8, ["ACGUACGU"])):
            env = build_env(spec)
            assert env.initial_state() == State(tokens=())

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            build_env(EnvSpec(variant=PREPEND_APPEND_BITS, max_len=0, vocab=("0",), references=()))
        with pytest.raises(ValueError):
            build_env(EnvSpec(variant=PREPEND_APPEND_BITS, max_len=2, vocab=(), references=("00",)))
        with pytest.raises(ValueError):
            build_env(EnvSpec(variant="nope", max_len=2))


class TestValidActions:
    def test_bits_interior_has_four_actions(self):
        env = build_env(bits_spec(3, ["000"]))
        s = State(tokens=(0,))
        assert len(env.valid_actions(s)) == 4

    def test_bits_empty_deduplicates_to_two(self):
        env = build_env(bits_spec(3, ["000"]))
        s0 = env.initial_state()
        acts = env.valid_actions(s0)
        assert len(acts) == 2
        children = [env.apply(s0, a) for a in acts]
        assert len(set(children)) == 2  # one child per vocab token, no duplicates

    def test_terminal_state_rejects_queries(self):
        env = build_env(bits_spec(2, ["00"]))
        t = State(tokens=(0, 0), terminal=True)
        with pytest.raises(ValueError):
            env.valid_actions(t)

    def test_landscape_stop_allowed_from_length_one(self):
        env = build_env(landscape_spec(3, ["ACG"]))
        assert env.valid_actions(env.initial_state()) == [0, 1, 2, 3]
        assert env.valid_actions(State(tokens=(0,))) == [0, 1, 2, 3, 4]
        assert env.valid_actions(State(tokens=(0, 1, 2))) == [4]


class TestApply:
    def test_append_and_prepend(self):
        env = build_env(bits_spec(4, ["0000"]))
        s = State(tokens=(0, 1))  # "01"
        appended = env.apply(s, 2 + 1)  # append "1"
        assert appended.tokens == (0, 1, 1)
        prepended = env.apply(s, 1)  # prepend "1"
        assert prepended.tokens == (1, 0, 1)

    def test_landscape_stop_marks_terminal(self):
        env = build_env(landscape_spec(4, ["ACGA"]))
        s = State(tokens=(0, 1, 2))  # "ACG"
        t = env.apply(s, 4)
        assert t == State(tokens=(0, 1, 2), terminal=True)

    def test_invalid_action_raises(self):
        env = build_env(bits_spec(2, ["00"]))
        with pytest.raises(ValueError):
            env.apply(env.initial_state(), 0)  # prepend masked at the empty state


class TestParents:
    def test_known_bit_parents(self):
        env = build_env(bits_spec(3, ["000"]))
        # "011": drop-first gives "11" (prepend 0), drop-last gives "01" (append 1)
        got = env.parents(State(tokens=(0, 1, 1), terminal=True))
        assert got == [(State(tokens=(1, 1)), 0), (State(tokens=(0, 1)), 2 + 1)]

    def test_same_parent_two_edges(self):
        env = build_env(bits_spec(3, ["000"]))
        got = env.parents(State(tokens=(0, 0)))
        assert len(got) == 2
        assert {p for p, _ in got} == {State(tokens=(0,))}
        assert len({a for _, a in got}) == 2

    def test_two_doors_leaf_parent(self):
        env = build_env(two_doors_spec())
        got = env.parents(State(tokens=(0, 7), terminal=True))
        assert got == [(State(tokens=(0,)), 7)]

    def test_initial_state_has_no_parents(self):
        env = build_env(bits_spec(2, ["00"]))
        with pytest.raises(ValueError):
            env.parents(env.initial_state())

    @pytest.mark.parametrize(
        "spec",
        [bits_spec(3, ["011"]), landscape_spec(2, ["AC"]), two_doors_spec()],
    )
    def test_parents_match_brute_force(self, spec):
        env = build_env(spec)
        graph = enumerate_states(env)
        for s in graph.states:
            if s == env.initial_state():
                continue
            assert sorted(env.parents(s), key=repr) == sorted(
                brute_force_parents(env, s), key=repr
            )


class TestReward:
    def test_reference_hit_scores_e(self):
        env = build_env(bits_spec(4, ["0110"]))
        r, logr = env.reward(State(tokens=(0, 1, 1, 0), terminal=True))
        assert r == pytest.approx(math.e, abs=1e-12)
        assert logr == pytest.approx(1.0, abs=1e-12)

    def test_max_distance_scores_one(self):
        env = build_env(bits_spec(4, ["1111"]))
        r, _ = env.reward(State(tokens=(0, 0, 0, 0), terminal=True))
        assert r == pytest.approx(1.0, abs=1e-12)

    def test_two_doors_rewards(self):
        env = build_env(two_doors_spec())
        assert env.reward(State(tokens=(1, 0), terminal=True))[0] == 100.0
        assert env.reward(State(tokens=(0, 42), terminal=True))[0] == 1.0

    def test_beta_scales_log_reward(self):
        env = build_env(bits_spec(4, ["0110"], beta=3.0))
        _, logr = env.reward(State(tokens=(0, 1, 1, 0), terminal=True))
        assert logr == pytest.approx(3.0, abs=1e-12)

    def test_non_terminal_rejected(self):
        env = build_env(bits_spec(4, ["0110"]))
        with pytest.raises(ValueError):
            env.reward(State(tokens=(0, 1)))


class TestEncode:
    def test_empty_sequence(self):
        env = build_env(bits_spec(4, ["0000"]))
        x = env.encode(env.initial_state())
        assert x.shape == (4 * 2 + 5 + 1,)
        assert np.all(x[: 4 * 2] == 0)
        assert x[4 * 2] == 1.0  # length one-hot at 0
        assert x[-1] == 0.0

    def test_structure_of_partial_sequence(self):
        env = build_env(bits_spec(4, ["0000"]))
        x = env.encode(State(tokens=(0, 1)))
        assert x[0] == 1.0  # position 0 token "0"
        assert x[2 + 1] == 1.0  # position 1 token "1"
        assert np.all(x[4:8] == 0)  # padded positions
        assert x[8 + 2] == 1.0  # length one-hot at 2

    def test_injective_on_enumerated_states(self):
        env = build_env(bits_spec(3, ["000"]))
        graph = enumerate_states(env)
        encs = {tuple(env.encode(s)) for s in graph.states}
        assert len(encs) == graph.n_states

    def test_deterministic(self):
        env = build_env(default_landscape_spec())
        s = State(tokens=(0, 3, 2))
        assert np.array_equal(env.encode(s), env.encode(s))


class TestEnumerate:
    def test_two_doors_state_count(self):
        graph = enumerate_states(build_env(two_doors_spec()))
        assert graph.n_states == 1 + 2 + 101

    def test_two_bit_env_has_seven_states(self):
        graph = enumerate_states(build_env(bits_spec(2, ["11"])))
        assert graph.n_states == 7
        decoded = {graph.env.decode(s) for s in graph.states}
        assert decoded == {"", "0", "1", "00", "01", "10", "11"}

    def test_landscape_len1_has_nine_states(self):
        graph = enumerate_states(build_env(landscape_spec(1, ["A"], delta=0)))
        assert graph.n_states == 1 + 4 + 4
        assert len(graph.terminal_reward) == 4

    def test_cap_enforced(self):
        env = build_env(default_bits_spec())
        with pytest.raises(ValueError):
            enumerate_states(env, cap=10)

    def test_topological_order_and_reachability(self):
        for spec in (bits_spec(3, ["000"]), landscape_spec(2, ["AA"]), two_doors_spec()):
            graph = enumerate_states(build_env(spec))
            for i, out in enumerate(graph.children):
                for _, j in out:
                    assert j > i  # edges respect state order, hence acyclic
            for i, s in enumerate(graph.states):
                if i > 0:
                    assert graph.parent_edges[i], f"unreachable-looking state {s}"

    def test_trajectory_count_is_two_pow_n_minus_one(self):
        # Path counting by DP over parent edges.
        for n in (2, 3, 4):
            env = build_env(bits_spec(n, ["0" * n]))
            graph = enumerate_states(env)
            paths = [0] * graph.n_states
            paths[0] = 1
            for i in range(1, graph.n_states):
                paths[i] = sum(paths[p] for p, _ in graph.parent_edges[i])
            for t in graph.terminal_indices():
                assert paths[t] == 2 ** (n - 1)

    def test_json_dump_round_trips(self, tmp_path):
        import json

        graph = enumerate_states(build_env(two_doors_spec()))
        path = tmp_path / "graph.json"
        graph.dump(path)
        data = json.loads(path.read_text())
        assert data["schema_version"] == 1
        assert data["n_states"] == 104
        assert len(data["edges"]) == 2 + 100 + 1


class TestDistances:
    def test_levenshtein_basics(self):
        assert levenshtein((0, 1, 1), (0, 1, 1)) == 0
        assert levenshtein((0, 0), (1, 1)) == 2
        assert levenshtein((0, 1, 0), ()) == 3
        assert levenshtein((0, 1), (1, 0, 1)) == 1

    def test_vectorised_matches_scalar(self):
        rng = np.random.default_rng(11)
        xs = rng.integers(0, 4, size=(40, 6))
        ys = rng.integers(0, 4, size=(40, 9))
        got = levenshtein_many(xs, ys)
        want = [levenshtein(tuple(a), tuple(b)) for a, b in zip(xs, ys)]
        assert got.tolist() == want
