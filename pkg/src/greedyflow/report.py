"""Render a run directory's JSON artifacts into figures and CSV tables.

Consumes whatever it finds (metrics.jsonl, sweep.json, calibration.json,
pruned.json, changed_p.json) and writes one PNG plus one CSV per artifact
into ``<run>/report/``.  Purely a presentation layer: nothing here feeds back
into training or evaluation.
"""
from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import read_jsonl


def _write_csv(path, rows: list[dict]) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)


def render_metrics(metrics_path, out_dir) -> list[str]:
    records = read_jsonl(metrics_path)
    if not records:
        return []
    steps = [r["step"] for r in records]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    axes[0, 0].plot(steps, [r["mean_reward"] for r in records], lw=0.8)
    axes[0, 0].set_ylabel("mean batch reward")
    axes[0, 1].plot(steps, [r["modes"] for r in records], lw=0.8, color="tab:green")
    axes[0, 1].set_ylabel("modes found")
    axes[1, 0].semilogy(steps, [max(r["loss_tb"], 1e-12) for r in records],
                        lw=0.8, label="flow loss")
    axes[1, 0].semilogy(steps, [max(r["loss_q"], 1e-12) for r in records],
                        lw=0.8, label="value loss")
    axes[1, 0].set_ylabel("loss")
    axes[1, 0].set_xlabel("iteration")
    axes[1, 0].legend(frameon=False)
    axes[1, 1].plot(steps, [r["p"] for r in records], lw=0.8, color="tab:red")
    axes[1, 1].set_ylabel("greediness p")
    axes[1, 1].set_xlabel("iteration")
    fig.tight_layout()
    png = os.path.join(out_dir, "training_curves.png")
    fig.savefig(png, dpi=150)
    plt.close(fig)
    csv_path = os.path.join(out_dir, "metrics.csv")
    _write_csv(csv_path, records)
    return [png, csv_path]


def render_sweep(sweep_path, out_dir) -> list[str]:
    with open(sweep_path) as f:
        doc = json.load(f)
    rows = doc["rows"]
    if not rows:
        return []
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    variants = sorted({r["variant"] for r in rows})
    for v in variants:
        sub = [r for r in rows if r["variant"] == v]
        sub.sort(key=lambda r: r["p"])
        ps = [r["p"] for r in sub]
        ax1.plot(ps, [r["mean_reward"] for r in sub], marker="o", label=v)
        ax2.plot(ps, [r["mean_similarity"] for r in sub], marker="o", label=v)
    ax1.set_xlabel("p")
    ax1.set_ylabel("mean reward")
    ax2.set_xlabel("p")
    ax2.set_ylabel("mean pairwise similarity")
    ax1.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    png = os.path.join(out_dir, "sweep_tradeoff.png")
    fig.savefig(png, dpi=150)
    plt.close(fig)
    csv_path = os.path.join(out_dir, "sweep.csv")
    _write_csv(csv_path, rows)
    return [png, csv_path]


def render_calibration(path, out_dir) -> list[str]:
    with open(path) as f:
        doc = json.load(f)
    recs = doc["records"]
    if not recs:
        return []
    fig, ax = plt.subplots(figsize=(5, 5))
    xs = [r["q_hat"] for r in recs]
    ys = [r["q_pred"] for r in recs]
    err = [r["stderr"] for r in recs]
    ax.errorbar(xs, ys, xerr=err, fmt="o", ms=4, alpha=0.7, lw=0.8)
    lo = min(min(xs), min(ys))
    hi = max(max(xs), max(ys))
    ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
    ax.set_xlabel("rollout estimate of reward-to-go")
    ax.set_ylabel("predicted action value")
    rho = doc.get("spearman")
    if rho is not None:
        ax.set_title(f"rank correlation {rho:.3f}")
    fig.tight_layout()
    png = os.path.join(out_dir, "calibration_scatter.png")
    fig.savefig(png, dpi=150)
    plt.close(fig)
    csv_path = os.path.join(out_dir, "calibration.csv")
    _write_csv(csv_path, recs)
    return [png, csv_path]


def render_pruned(path, out_dir) -> list[str]:
    with open(path) as f:
        doc = json.load(f)
    regimes = doc["rewards"]
    if not regimes:
        return []
    fig, ax = plt.subplots(figsize=(6, 4))
    names = list(regimes)
    ax.violinplot([regimes[n] for n in names], showmeans=True)
    ax.set_xticks(range(1, len(names) + 1), names, rotation=15)
    ax.set_ylabel("terminal reward")
    fig.tight_layout()
    png = os.path.join(out_dir, "pruned_rewards.png")
    fig.savefig(png, dpi=150)
    plt.close(fig)
    rows = [{"regime": n, "sample": i, "reward": r}
            for n in names for i, r in enumerate(regimes[n])]
    csv_path = os.path.join(out_dir, "pruned.csv")
    _write_csv(csv_path, rows)
    return [png, csv_path]


def render_changed_p(path, out_dir) -> list[str]:
    with open(path) as f:
        doc = json.load(f)
    rows = doc["rows"]
    if not rows:
        return []
    fig, ax1 = plt.subplots(figsize=(6, 4))
    ps = [r["p_prime"] for r in rows]
    ax1.plot(ps, [r["spearman"] for r in rows], marker="o", label="rank correlation")
    ax1.plot(ps, [r["lower_bound_rate"] for r in rows], marker="s",
             label="lower-bound rate")
    ax1.axvline(doc.get("p_train", 0.0), ls=":", color="grey", lw=0.8)
    ax1.set_xlabel("inference p")
    ax1.set_ylim(-0.05, 1.05)
    ax1.legend(frameon=False)
    fig.tight_layout()
    png = os.path.join(out_dir, "changed_p.png")
    fig.savefig(png, dpi=150)
    plt.close(fig)
    csv_path = os.path.join(out_dir, "changed_p.csv")
    _write_csv(csv_path, rows)
    return [png, csv_path]


RENDERERS = {
    "metrics.jsonl": render_metrics,
    "sweep.json": render_sweep,
    "calibration.json": render_calibration,
    "pruned.json": render_pruned,
    "changed_p.json": render_changed_p,
}


def render_run(run_dir, out_dir=None) -> list[str]:
    """Render every recognised artifact in ``run_dir``; returns written paths."""
    out_dir = out_dir or os.path.join(run_dir, "report")
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []
    for name, renderer in RENDERERS.items():
        src = os.path.join(run_dir, name)
        if os.path.exists(src):
            written.extend(renderer(src, out_dir))
    return written
