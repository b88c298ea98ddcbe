"""Run configuration: a single JSON document with dotted-key overrides.

Layout (all blocks optional except ``env``; defaults in parentheses):

    {
      "env":   {"variant", "max_len", "vocab", "references",
                "mode_edit_threshold" (0), "beta" (1.0), "reward_floor" (1e-6)},
      "model": {"hidden" ([64, 64])},
      "train": {"iterations" (2000), "batch_size" (64), "lr" (1e-4),
                "lr_log_z" (1e-2), "q_lr" (1e-4), "seed" (0),
                "variant" ({"kind": "pure_pf", ...}), "p" (0.0),
                "p_schedule" (derived from p; cosine over 1500 steps for the
                masking variants, constant otherwise),
                "q" ({"n_step": null, "tau": 0.95, "epsilon": 0.1, ...}),
                "gfn" ({"objective": "tb"}),
                "workers" (1), "gfn_updates" (1), "q_updates" (1),
                "checkpoint_every" (0), "log_wall_time" (false)},
      "output": {"dir" ("runs/<variant>")}
    }

Unknown keys anywhere are an error.  ``apply_overrides`` accepts
``section.key=value`` strings whose values parse as JSON (with a plain-string
fallback), so ``--set train.seed=7`` matches editing the file.
"""
from __future__ import annotations

import copy
import json

from .envs import (
    EnvSpec,
    PREPEND_APPEND_BITS,
    STRING_LANDSCAPE,
    TWO_DOORS,
    default_bits_spec,
    default_landscape_spec,
    two_doors_spec,
)
from .gfn import GfnConfig
from .policy import (
    COSINE,
    MixVariant,
    P_OF_MAX,
    P_QUANTILE,
    PSchedule,
    VARIANT_KINDS,
)
from .qlearn import QConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


def _check_keys(block: dict, allowed, where: str) -> None:
    unknown = set(block) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}; allowed: {sorted(allowed)}")


def _canonical_kind(name: str) -> str:
    flat = name.lower().replace("-", "").replace("_", "")
    for kind in VARIANT_KINDS:
        if kind.replace("_", "") == flat:
            return kind
    raise ConfigError(f"unknown policy variant {name!r}; expected one of {VARIANT_KINDS}")


def parse_env(block: dict) -> EnvSpec:
    _check_keys(block, {"variant", "max_len", "vocab", "references",
                        "mode_edit_threshold", "beta", "reward_floor"}, "env")
    if "variant" not in block:
        raise ConfigError("env.variant is required")
    variant = block["variant"]
    if variant == TWO_DOORS:
        base = two_doors_spec()
    elif variant == PREPEND_APPEND_BITS:
        base = default_bits_spec()
    elif variant == STRING_LANDSCAPE:
        base = default_landscape_spec()
    else:
        raise ConfigError(f"unknown env.variant {variant!r}")
    spec = EnvSpec(
        variant=variant,
        max_len=block.get("max_len", base.max_len),
        vocab=tuple(block.get("vocab", base.vocab)),
        references=tuple(block.get("references", base.references)),
        mode_edit_threshold=block.get("mode_edit_threshold", base.mode_edit_threshold),
        beta=block.get("beta", base.beta),
        reward_floor=block.get("reward_floor", base.reward_floor),
    )
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"env: {exc}") from exc
    return spec


def parse_variant(value) -> MixVariant:
    if isinstance(value, str):
        return MixVariant(_canonical_kind(value))
    _check_keys(value, {"kind", "temperature", "soft_mix", "max_steps"}, "train.variant")
    if "kind" not in value:
        raise ConfigError("train.variant.kind is required")
    kw = dict(value)
    kw["kind"] = _canonical_kind(kw["kind"])
    try:
        return MixVariant(**kw)
    except ValueError as exc:
        raise ConfigError(f"train.variant: {exc}") from exc


def default_schedule(variant: MixVariant, final_p: float) -> PSchedule:
    # Pruning rules start out with garbage value estimates; easing p in keeps
    # early training from over-masking.
    if variant.kind in (P_OF_MAX, P_QUANTILE):
        return PSchedule(kind=COSINE, final_p=final_p, total_steps=1500)
    return PSchedule(kind="constant", final_p=final_p)


def parse_train(block: dict) -> TrainConfig:
    allowed = {"iterations", "batch_size", "lr", "lr_log_z", "q_lr", "seed",
               "variant", "p", "p_schedule", "q", "gfn", "workers",
               "gfn_updates", "q_updates", "checkpoint_every", "log_wall_time"}
    _check_keys(block, allowed, "train")
    variant = parse_variant(block.get("variant", "pure_pf"))
    final_p = block.get("p", 0.0)
    if not isinstance(final_p, (int, float)) or not 0.0 <= final_p <= 1.0:
        raise ConfigError("train.p must be a number in [0, 1]")
    if "p_schedule" in block:
        sb = block["p_schedule"]
        _check_keys(sb, {"kind", "final_p", "total_steps", "step_count"}, "train.p_schedule")
        try:
            schedule = PSchedule(
                kind=sb.get("kind", "constant"),
                final_p=sb.get("final_p", final_p),
                total_steps=sb.get("total_steps", 1500),
                step_count=sb.get("step_count", 500),
            )
        except ValueError as exc:
            raise ConfigError(f"train.p_schedule: {exc}") from exc
    else:
        schedule = default_schedule(variant, float(final_p))

    qb = dict(block.get("q", {}))
    _check_keys(qb, {"n_step", "gamma", "tau", "epsilon", "loss_kind", "bootstrap",
                     "beta_scaled_targets", "huber_delta"}, "train.q")
    gb = dict(block.get("gfn", {}))
    _check_keys(gb, {"objective", "subtb_lambda", "uniform_pb"}, "train.gfn")
    try:
        return TrainConfig(
            iterations=block.get("iterations", 2000),
            batch_size=block.get("batch_size", 64),
            lr=block.get("lr", 1e-4),
            lr_log_z=block.get("lr_log_z", 1e-2),
            q_lr=block.get("q_lr", 1e-4),
            seed=block.get("seed", 0),
            variant=variant,
            p_schedule=schedule,
            q=QConfig(**qb),
            gfn=GfnConfig(**gb),
            workers=block.get("workers", 1),
            gfn_updates=block.get("gfn_updates", 1),
            q_updates=block.get("q_updates", 1),
            checkpoint_every=block.get("checkpoint_every", 0),
            log_wall_time=block.get("log_wall_time", False),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc


class RunConfig:
    """Validated view of one experiment configuration."""

    def __init__(self, env: EnvSpec, hidden: tuple[int, ...], train: TrainConfig,
                 out_dir: str):
        self.env = env
        self.hidden = hidden
        self.train = train
        self.out_dir = out_dir


def parse_config(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys(doc, {"env", "model", "train", "output"}, "config root")
    if "env" not in doc:
        raise ConfigError("config must contain an 'env' block")
    env = parse_env(doc["env"])
    model = dict(doc.get("model", {}))
    _check_keys(model, {"hidden"}, "model")
    hidden = tuple(model.get("hidden", (64, 64)))
    if not hidden or any((not isinstance(h, int)) or h <= 0 for h in hidden):
        raise ConfigError("model.hidden must be a non-empty list of positive ints")
    train = parse_train(dict(doc.get("train", {})))
    output = dict(doc.get("output", {}))
    _check_keys(output, {"dir"}, "output")
    out_dir = output.get("dir", f"runs/{env.variant}")
    return RunConfig(env=env, hidden=hidden, train=train, out_dir=out_dir)


def load_config(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` strings; values are JSON, falling back to strings."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        if not all(keys):
            raise ConfigError(f"override {item!r} has an empty key component")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        for k in keys[:-1]:
            nxt = node.setdefault(k, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r} descends into non-object {k!r}")
            node = nxt
        node[keys[-1]] = value
    return doc
