"""Exact ground truth on enumerable environments.

Flows are pinned to the unique solution consistent with a uniform backward
policy over parent edges: the flow of edge (s -> s') is F(s') divided by the
number of parent edges of s'.  Terminal states absorb R^beta units of flow,
so the root flow equals the partition sum Z = sum_x R(x)^beta.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json

import numpy as np

from .envs import OracleGraph


@dataclass
class OracleTables:
    state_flow: dict[int, float] = field(default_factory=dict)
    edge_flow: dict[tuple[int, int, int], float] = field(default_factory=dict)  # (src, action, dst)
    terminal_dist: dict[int, float] = field(default_factory=dict)
    q_table: dict[tuple[int, int], float] = field(default_factory=dict)

    def to_json(self, graph: OracleGraph) -> dict:
        dec = lambda i: graph.env.decode(graph.states[i])
        return {
            "schema_version": 1,
            "state_flow": {dec(i): f for i, f in self.state_flow.items()},
            "edge_flow": [
                {"src": dec(i), "action": a, "dst": dec(j), "flow": f}
                for (i, a, j), f in self.edge_flow.items()
            ],
            "terminal_dist": {dec(i): p for i, p in self.terminal_dist.items()},
            "q_table": [
                {"state": dec(i), "action": a, "q": v} for (i, a), v in self.q_table.items()
            ],
        }

    def dump(self, graph: OracleGraph, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(graph), f, indent=2)


def exact_flows(graph: OracleGraph, beta: float) -> OracleTables:
    """Solve the flow network exactly by one reverse topological sweep."""
    n = graph.n_states
    flow = np.zeros(n)
    tables = OracleTables()
    for i in range(n - 1, -1, -1):
        if graph.states[i].terminal:
            flow[i] = graph.terminal_reward[i] ** beta
            continue
        total = 0.0
        for a, j in graph.children[i]:
            ef = flow[j] / len(graph.parent_edges[j])
            tables.edge_flow[(i, a, j)] = ef
            total += ef
        flow[i] = total
    tables.state_flow = {i: float(flow[i]) for i in range(n)}
    return tables


def flow_policy(graph: OracleGraph, tables: OracleTables):
    """Forward policy implied by exact flows: P(a|s) = F(s -a-> s') / F(s)."""

    def policy(i: int) -> np.ndarray:
        probs = np.zeros(graph.env.action_space_size)
        fs = tables.state_flow[i]
        for a, j in graph.children[i]:
            probs[a] = tables.edge_flow[(i, a, j)] / fs
        return probs

    return policy


def uniform_policy(graph: OracleGraph):
    def policy(i: int) -> np.ndarray:
        probs = np.zeros(graph.env.action_space_size)
        acts = [a for a, _ in graph.children[i]]
        probs[acts] = 1.0 / len(acts)
        return probs

    return policy


def exact_terminal_distribution(graph: OracleGraph, policy) -> dict[int, float]:
    """Visit-probability sweep; ``policy`` maps a state index to action probs.

    Raises if the policy puts mass on actions that are not edges of the graph.
    """
    visit = np.zeros(graph.n_states)
    visit[0] = 1.0
    for i in range(graph.n_states):
        if graph.states[i].terminal or visit[i] == 0.0:
            continue
        probs = np.asarray(policy(i))
        if probs.min() < -1e-12:
            raise ValueError("policy has negative probabilities")
        edge_mass = 0.0
        for a, j in graph.children[i]:
            visit[j] += visit[i] * probs[a]
            edge_mass += probs[a]
        if abs(edge_mass - 1.0) > 1e-9:
            raise ValueError(f"policy at state {i} puts mass {1 - edge_mass:.3g} off valid actions")
    return {i: float(visit[i]) for i in graph.terminal_indices()}


def exact_q(graph: OracleGraph, policy) -> dict[tuple[int, int], float]:
    """Undiscounted reward-to-go of every edge under ``policy``, by backward induction."""
    n = graph.n_states
    value = np.zeros(n)
    q: dict[tuple[int, int], float] = {}
    for i in range(n - 1, -1, -1):
        if graph.states[i].terminal:
            value[i] = graph.terminal_reward[i]
            continue
        probs = np.asarray(policy(i))
        v = 0.0
        for a, j in graph.children[i]:
            q[(i, a)] = float(value[j])
            v += probs[a] * value[j]
        value[i] = v
    return q


def tv_distance(d1: dict, d2: dict) -> float:
    keys = set(d1) | set(d2)
    return 0.5 * sum(abs(d1.get(k, 0.0) - d2.get(k, 0.0)) for k in keys)


def reward_distribution(graph: OracleGraph, beta: float) -> dict[int, float]:
    """Target terminal distribution R^beta / Z."""
    weights = {i: r**beta for i, r in graph.terminal_reward.items()}
    z = sum(weights.values())
    return {i: w / z for i, w in weights.items()}


def conservation_residual(graph: OracleGraph, tables: OracleTables) -> float:
    """Max |inflow - outflow| over interior states (root and terminals excluded)."""
    worst = 0.0
    for i in range(1, graph.n_states):
        if graph.states[i].terminal:
            continue
        inflow = sum(
            tables.edge_flow[(p, a, i)] for p, a in graph.parent_edges[i]
        )
        outflow = sum(tables.edge_flow[(i, a, j)] for a, j in graph.children[i])
        worst = max(worst, abs(inflow - outflow))
    return worst
