"""Command-line entry points.

    greedyflow train        --config cfg.json [--set k=v ...] [--out DIR] [--seed N]
    greedyflow sweep        --checkpoint ck.json --grid pgreedy:0:1:6 [...]
    greedyflow probe        {calibration | pruned | changed-p} --checkpoint ck.json [...]
    greedyflow oracle-check --config cfg.json [--out DIR]
    greedyflow report       --run DIR [--out DIR]

Every artifact lands under the chosen output directory and carries a
schema_version field.  The CLI is the only layer that touches files or
process exit codes; the library modules stay pure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import nets
from .config import ConfigError, apply_overrides, load_config, parse_config
from .envs import TWO_DOORS, State, build_env, enumerate_states
from .metrics import spearman
from .oracle import (
    conservation_residual,
    exact_flows,
    exact_q,
    exact_terminal_distribution,
    flow_policy,
    reward_distribution,
    tv_distance,
    uniform_policy,
)
from .policy import MixVariant
from .trainer import (
    PRUNE_REGIMES,
    SCHEMA_VERSION,
    TrainingDiverged,
    inference_sweep,
    load_checkpoint,
    probe_changed_p,
    probe_pruned_actions,
    probe_q_calibration,
    train,
)

PROBE_NAMES = ("calibration", "pruned", "changed-p")


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _load_run_config(args):
    doc = load_config(args.config)
    doc = apply_overrides(doc, args.set or [])
    if args.seed is not None:
        doc = apply_overrides(doc, [f"train.seed={args.seed}"])
    if args.out is not None:
        doc = apply_overrides(doc, [f"output.dir={json.dumps(args.out)}"])
    return parse_config(doc)


def cmd_train(args) -> int:
    try:
        rc = _load_run_config(args)
    except ConfigError as exc:
        return _fail(str(exc))
    env = build_env(rc.env)
    try:
        run, _ = train(env, rc.train, hidden=rc.hidden, out_dir=rc.out_dir)
    except TrainingDiverged as exc:
        return _fail(f"training aborted: {exc} (diagnostic checkpoint written)")
    print(f"trained {run.step} iterations; {run.mode_tracker.count} modes; "
          f"artifacts in {rc.out_dir}")
    return 0


def parse_grid(spec: str):
    """``variant:pmin:pmax:steps`` -> list of (MixVariant, p) cells."""
    parts = spec.split(":")
    if len(parts) != 4:
        raise ConfigError(f"grid {spec!r} must look like variant:pmin:pmax:steps")
    from .config import _canonical_kind

    kind = _canonical_kind(parts[0])
    try:
        lo, hi, steps = float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError as exc:
        raise ConfigError(f"grid {spec!r}: {exc}") from exc
    if steps < 1:
        raise ConfigError(f"grid {spec!r}: steps must be >= 1")
    ps = np.linspace(lo, hi, steps)
    return [(MixVariant(kind), float(p)) for p in ps]


def cmd_sweep(args) -> int:
    if not os.path.exists(args.checkpoint):
        return _fail(f"checkpoint not found: {args.checkpoint}")
    try:
        cells = [cell for g in args.grid for cell in parse_grid(g)]
    except ConfigError as exc:
        return _fail(str(exc))
    run = load_checkpoint(args.checkpoint)
    rows = inference_sweep(run, cells, samples_per_cell=args.samples,
                           seed=args.seed, similarity_top_k=args.top_k)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "sweep.json")
    with open(path, "w") as f:
        json.dump({"schema_version": SCHEMA_VERSION, "kind": "sweep",
                   "samples_per_cell": args.samples, "rows": rows}, f, indent=2)
    for row in rows:
        print(f"{row['variant']:>12} p={row['p']:.3f} reward={row['mean_reward']:.4f} "
              f"similarity={row['mean_similarity']:.4f} modes={row['modes']}")
    print(f"sweep table written to {path}")
    return 0


def cmd_probe(args) -> int:
    if not os.path.exists(args.checkpoint):
        return _fail(f"checkpoint not found: {args.checkpoint}")
    run = load_checkpoint(args.checkpoint)
    out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out_dir, exist_ok=True)

    if args.probe == "calibration":
        result = probe_q_calibration(run, n_states=args.k, rollouts=args.rollouts,
                                     p=args.p, seed=args.seed)
        path = os.path.join(out_dir, "calibration.json")
        with open(path, "w") as f:
            json.dump(result, f, indent=2)
        print(f"{len(result['records'])} probed states; "
              f"rank correlation {result['spearman']:.4f}")
    elif args.probe == "pruned":
        p = args.p if args.p is not None else run.current_p()
        rewards = {}
        for regime in PRUNE_REGIMES:
            rewards[regime] = probe_pruned_actions(
                run, regime, samples=args.samples, p=p,
                t_lo=args.t_lo, t_hi=args.t_hi, seed=args.seed,
            )
        path = os.path.join(out_dir, "pruned.json")
        with open(path, "w") as f:
            json.dump({"schema_version": SCHEMA_VERSION, "kind": "pruned",
                       "p": p, "samples": args.samples, "rewards": rewards}, f, indent=2)
        for regime, vals in rewards.items():
            print(f"{regime:>14}: mean reward {float(np.mean(vals)):.4f}")
    else:  # changed-p
        p_train = args.p_train if args.p_train is not None else run.current_p()
        if args.p_grid:
            grid = [float(x) for x in args.p_grid.split(",")]
        else:
            grid = sorted({0.0, p_train, (p_train + 1.0) / 2.0, 1.0})
        result = probe_changed_p(run, p_train=p_train, p_grid=grid,
                                 n_states=args.k, rollouts=args.rollouts,
                                 seed=args.seed)
        path = os.path.join(out_dir, "changed_p.json")
        with open(path, "w") as f:
            json.dump(result, f, indent=2)
        for row in result["rows"]:
            print(f"p'={row['p_prime']:.3f} spearman={row['spearman']:.4f} "
                  f"lower_bound_rate={row['lower_bound_rate']:.3f}")
    print(f"probe output written to {path}")
    return 0


def cmd_oracle_check(args) -> int:
    try:
        rc = _load_run_config(args)
    except ConfigError as exc:
        return _fail(str(exc))
    env = build_env(rc.env)
    try:
        graph = enumerate_states(env, cap=args.cap)
    except ValueError as exc:
        return _fail(str(exc))
    checks = []

    tables = exact_flows(graph, beta=env.spec.beta)
    residual = conservation_residual(graph, tables)
    checks.append(("flow conservation residual", residual, residual < 1e-9))

    dist = exact_terminal_distribution(graph, flow_policy(graph, tables))
    tv = tv_distance(dist, reward_distribution(graph, env.spec.beta))
    checks.append(("terminal distribution vs reward^beta / Z (TV)", tv, tv < 1e-9))

    q = exact_q(graph, uniform_policy(graph))
    worst_bellman = 0.0
    for (i, a), val in q.items():
        j = dict(graph.children[i])[a]
        if graph.states[j].terminal:
            want = graph.terminal_reward[j]
        else:
            probs = uniform_policy(graph)(j)
            want = sum(probs[a2] * q[(j, a2)] for a2, _ in graph.children[j])
        worst_bellman = max(worst_bellman, abs(val - want))
    checks.append(("action-value consistency residual", worst_bellman, worst_bellman < 1e-9))

    report = {"schema_version": SCHEMA_VERSION, "kind": "oracle_check",
              "n_states": graph.n_states, "checks": []}
    if env.spec.variant == TWO_DOORS:
        left = graph.index[State(tokens=(0,))]
        right = graph.index[State(tokens=(1,))]
        values = {
            "F(left)": tables.state_flow[left],
            "F(right)": tables.state_flow[right],
            "Z": tables.state_flow[0],
            "Q(root, left)": q[(0, 0)],
            "Q(root, right)": q[(0, 1)],
        }
        expected = {"F(left)": 100.0, "F(right)": 100.0, "Z": 200.0,
                    "Q(root, left)": 1.0, "Q(root, right)": 100.0}
        for name, got in values.items():
            checks.append((name, got, abs(got - expected[name]) < 1e-9))

    ok = True
    for name, value, passed in checks:
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name} = {value:.6g}")
        report["checks"].append({"name": name, "value": value, "passed": bool(passed)})
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "oracle_check.json"), "w") as f:
            json.dump(report, f, indent=2)
    return 0 if ok else 1


def cmd_report(args) -> int:
    from .report import render_run

    if not os.path.isdir(args.run):
        return _fail(f"run directory not found: {args.run}")
    written = render_run(args.run, out_dir=args.out)
    if not written:
        return _fail(f"no renderable artifacts found in {args.run}")
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greedyflow",
        description="Train flow-network samplers with value-guided greedy mixing, "
                    "and verify them against exact enumeration oracles.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run the joint training loop")
    p_train.add_argument("--config", required=True, help="JSON config file")
    p_train.add_argument("--set", action="append", metavar="K=V",
                         help="dotted-key config override, e.g. train.seed=7")
    p_train.add_argument("--out", help="output directory (overrides output.dir)")
    p_train.add_argument("--seed", type=int, help="shortcut for train.seed")
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="inference-time variant/p grid evaluation")
    p_sweep.add_argument("--checkpoint", required=True)
    p_sweep.add_argument("--grid", action="append", required=True,
                         metavar="VARIANT:PMIN:PMAX:STEPS",
                         help="e.g. pgreedy:0:1:6; repeatable")
    p_sweep.add_argument("--samples", type=int, default=512)
    p_sweep.add_argument("--top-k", type=int, default=100,
                         help="similarity computed over the top-k samples by reward")
    p_sweep.add_argument("--seed", type=int, default=0)
    p_sweep.add_argument("--out")
    p_sweep.set_defaults(func=cmd_sweep)

    p_probe = sub.add_parser("probe", help="post-training analysis probes")
    p_probe.add_argument("probe", choices=PROBE_NAMES,
                         help=f"one of {', '.join(PROBE_NAMES)}")
    p_probe.add_argument("--checkpoint", required=True)
    p_probe.add_argument("--k", type=int, default=64, help="probed states")
    p_probe.add_argument("--rollouts", type=int, default=512)
    p_probe.add_argument("--samples", type=int, default=512, help="pruned-probe samples")
    p_probe.add_argument("--p", type=float, default=None,
                         help="greediness for calibration/pruned (default: trained p)")
    p_probe.add_argument("--p-train", type=float, default=None)
    p_probe.add_argument("--p-grid", help="comma list of p' values for changed-p")
    p_probe.add_argument("--t-lo", type=int, default=None)
    p_probe.add_argument("--t-hi", type=int, default=None)
    p_probe.add_argument("--seed", type=int, default=0)
    p_probe.add_argument("--out")
    p_probe.set_defaults(func=cmd_probe)

    p_oracle = sub.add_parser("oracle-check", help="exact-enumeration consistency checks")
    p_oracle.add_argument("--config", required=True)
    p_oracle.add_argument("--set", action="append", metavar="K=V")
    p_oracle.add_argument("--out")
    p_oracle.add_argument("--seed", type=int, help="accepted for symmetry; unused")
    p_oracle.add_argument("--cap", type=int, default=10**6,
                          help="maximum number of states to enumerate")
    p_oracle.set_defaults(func=cmd_oracle_check)

    p_report = sub.add_parser("report", help="render figures and CSVs from run artifacts")
    p_report.add_argument("--run", required=True, help="run directory with artifacts")
    p_report.add_argument("--out", help="report directory (default <run>/report)")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
