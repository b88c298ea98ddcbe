"""Feed-forward function approximators with hand-written backpropagation.

A network is a tanh MLP over a flat float64 parameter vector; the final
linear layer is split into named heads (policy logits, state log-flow,
action values).  ``forward`` caches activations so ``backward`` can turn
head-space gradients into a parameter-space gradient analytically.  The
sampler net additionally carries a scalar ``log_z`` (the learned log
partition), stored next to the vector so the optimizer can give it its own
learning rate.

Everything here is deterministic: same seed, same inputs, same floats.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NEG_INF = -np.inf

# Action-shaped heads that honour the validity mask.
MASKABLE_HEADS = {"policy_logits", "q_values"}


@dataclass(frozen=True)
class NetSpec:
    input_width: int
    hidden: tuple[int, ...] = (64, 64)
    heads: tuple[tuple[str, int], ...] = ()
    with_log_z: bool = False
    activation: str = "tanh"

    def __post_init__(self):
        if self.input_width <= 0:
            raise ValueError("input_width must be positive")
        if not self.heads:
            raise ValueError("at least one output head is required")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden activations are supported")

    @property
    def output_width(self) -> int:
        return sum(w for _, w in self.heads)

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_width, *self.hidden, self.output_width]

    def head_slices(self) -> dict[str, slice]:
        out, off = {}, 0
        for name, w in self.heads:
            out[name] = slice(off, off + w)
            off += w
        return out

    def param_count(self) -> int:
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass
class ParamSet:
    vector: np.ndarray
    log_z: float = 0.0

    def copy(self) -> "ParamSet":
        return ParamSet(vector=self.vector.copy(), log_z=self.log_z)

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.vector).all() and np.isfinite(self.log_z))


@dataclass
class Gradient:
    vector: np.ndarray
    log_z: float = 0.0


def _layer_views(spec: NetSpec, vector: np.ndarray):
    """Yield (W, b) views into the flat vector, one pair per layer."""
    dims = spec.layer_dims
    off = 0
    for i in range(len(dims) - 1):
        n_in, n_out = dims[i], dims[i + 1]
        w = vector[off : off + n_in * n_out].reshape(n_out, n_in)
        off += n_in * n_out
        b = vector[off : off + n_out]
        off += n_out
        yield w, b


def init_params(spec: NetSpec, seed: int) -> ParamSet:
    """Symmetric uniform initialisation scaled by fan-in; log_z starts at 0."""
    rng = np.random.default_rng(seed)
    vector = np.empty(spec.param_count(), dtype=np.float64)
    dims = spec.layer_dims
    off = 0
    for i in range(len(dims) - 1):
        n_in, n_out = dims[i], dims[i + 1]
        bound = 1.0 / np.sqrt(n_in)
        vector[off : off + n_in * n_out] = rng.uniform(-bound, bound, size=n_in * n_out)
        off += n_in * n_out
        vector[off : off + n_out] = rng.uniform(-bound, bound, size=n_out)
        off += n_out
    return ParamSet(vector=vector, log_z=0.0)


def zero_params(spec: NetSpec) -> ParamSet:
    return ParamSet(vector=np.zeros(spec.param_count()), log_z=0.0)


@dataclass
class ForwardResult:
    heads: dict[str, np.ndarray]
    cache: list[np.ndarray] = field(repr=False, default_factory=list)
    valid_mask: np.ndarray | None = None


def forward(spec: NetSpec, params: ParamSet, x: np.ndarray, valid_mask=None) -> ForwardResult:
    """Run the net on a batch.

    ``x`` is (B, input_width); ``valid_mask`` (B, A) marks legal actions and
    is applied to the action-shaped heads, which report the masked entries as
    -inf sentinels.  The cache holds the per-layer activations needed by
    ``backward``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != spec.input_width:
        raise ValueError(f"input width {x.shape[1]} != spec width {spec.input_width}")
    cache = [x]
    a = x
    layers = list(_layer_views(spec, params.vector))
    for w, b in layers[:-1]:
        a = np.tanh(a @ w.T + b)
        cache.append(a)
    w, b = layers[-1]
    out = a @ w.T + b

    slices = spec.head_slices()
    heads = {}
    mask = None
    if valid_mask is not None:
        mask = np.atleast_2d(np.asarray(valid_mask, dtype=bool))
        if mask.shape[0] != x.shape[0]:
            raise ValueError("valid_mask batch size mismatch")
    for name, sl in slices.items():
        h = out[:, sl]
        if mask is not None and name in MASKABLE_HEADS:
            if h.shape[1] != mask.shape[1]:
                raise ValueError(f"mask width {mask.shape[1]} != head width {h.shape[1]}")
            h = np.where(mask, h, NEG_INF)
        heads[name] = h
    return ForwardResult(heads=heads, cache=cache, valid_mask=mask)


def backward(spec: NetSpec, params: ParamSet, result: ForwardResult, head_grads: dict) -> Gradient:
    """Backpropagate head-space gradients to a flat parameter gradient.

    ``head_grads`` maps head names to (B, head_width) arrays of dLoss/dOutput;
    omitted heads contribute nothing.  Gradients at masked positions must be
    zero already (the masked log-softmax derivative guarantees this).
    """
    x = result.cache[0]
    slices = spec.head_slices()
    d_out = np.zeros((x.shape[0], spec.output_width))
    for name, g in head_grads.items():
        d_out[:, slices[name]] = g

    layers = list(_layer_views(spec, params.vector))
    grad = np.zeros_like(params.vector)
    grad_views = list(_layer_views(spec, grad))

    delta = d_out
    for li in range(len(layers) - 1, -1, -1):
        a_prev = result.cache[li]
        gw, gb = grad_views[li]
        gw += delta.T @ a_prev
        gb += delta.sum(axis=0)
        if li > 0:
            w, _ = layers[li]
            delta = (delta @ w) * (1.0 - result.cache[li] ** 2)
    return Gradient(vector=grad, log_z=0.0)


def masked_log_softmax(logits: np.ndarray, valid_mask: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax over valid entries; invalid entries stay -inf."""
    z = np.where(valid_mask, logits, NEG_INF)
    zmax = np.max(z, axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = np.log(ez.sum(axis=-1, keepdims=True)) + zmax
    return z - lse


def masked_softmax(logits: np.ndarray, valid_mask: np.ndarray) -> np.ndarray:
    logp = masked_log_softmax(logits, valid_mask)
    p = np.exp(logp)
    return np.where(valid_mask, p, 0.0)


class Adam:
    """Adaptive moment estimation over a ParamSet, with a separate learning
    rate for log_z.  Raises on non-finite gradients, which in this codebase
    always means the loss diverged."""

    def __init__(self, spec: NetSpec, lr: float = 1e-4, lr_log_z: float = 1e-2,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.lr_log_z = lr_log_z
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = np.zeros(spec.param_count())
        self.v = np.zeros(spec.param_count())
        self.m_log_z = 0.0
        self.v_log_z = 0.0

    def step(self, params: ParamSet, grad: Gradient) -> ParamSet:
        if not (np.isfinite(grad.vector).all() and np.isfinite(grad.log_z)):
            raise FloatingPointError("non-finite gradient: training diverged")
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t

        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad.vector
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad.vector**2
        params.vector -= self.lr * (self.m / b1c) / (np.sqrt(self.v / b2c) + self.eps)

        self.m_log_z = self.beta1 * self.m_log_z + (1.0 - self.beta1) * grad.log_z
        self.v_log_z = self.beta2 * self.v_log_z + (1.0 - self.beta2) * grad.log_z**2
        params.log_z -= self.lr_log_z * (self.m_log_z / b1c) / (
            np.sqrt(self.v_log_z / b2c) + self.eps
        )
        if not params.all_finite():
            raise FloatingPointError("non-finite parameters after update")
        return params

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": self.m.tolist(),
            "v": self.v.tolist(),
            "m_log_z": self.m_log_z,
            "v_log_z": self.v_log_z,
            "lr": self.lr,
            "lr_log_z": self.lr_log_z,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_state_dict(cls, spec: NetSpec, state: dict) -> "Adam":
        opt = cls(spec, lr=state["lr"], lr_log_z=state["lr_log_z"],
                  beta1=state["beta1"], beta2=state["beta2"], eps=state["eps"])
        opt.t = state["t"]
        opt.m = np.asarray(state["m"], dtype=np.float64)
        opt.v = np.asarray(state["v"], dtype=np.float64)
        opt.m_log_z = state["m_log_z"]
        opt.v_log_z = state["v_log_z"]
        return opt


def spec_to_dict(spec: NetSpec) -> dict:
    return {
        "input_width": spec.input_width,
        "hidden": list(spec.hidden),
        "heads": [[n, w] for n, w in spec.heads],
        "with_log_z": spec.with_log_z,
        "activation": spec.activation,
    }


def spec_from_dict(d: dict) -> NetSpec:
    return NetSpec(
        input_width=d["input_width"],
        hidden=tuple(d["hidden"]),
        heads=tuple((n, w) for n, w in d["heads"]),
        with_log_z=d["with_log_z"],
        activation=d["activation"],
    )


def params_to_dict(params: ParamSet) -> dict:
    # float -> repr -> float round-trips exactly, so JSON keeps checkpoints bit-exact
    return {"vector": params.vector.tolist(), "log_z": params.log_z}


def params_from_dict(d: dict) -> ParamSet:
    return ParamSet(vector=np.asarray(d["vector"], dtype=np.float64), log_z=d["log_z"])
