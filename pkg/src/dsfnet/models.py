"""Permutation-equivariant scorers mapping an (n, d) sequence to n scores.

Two families: an instance-wise MLP and a small attention encoder without any
positional information.  Parameters live in a :class:`ParamSet`; forward
functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import adgraph as ad

__all__ = ["MLPSpec", "AttentionSpec", "IdentitySpec", "ParamSet", "init_params",
           "forward_mlp", "forward_attention", "forward_identity", "forward_fn",
           "score", "check_equivariance", "model_spec_from_config"]


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden: tuple[int, ...] = (32,)
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.activation != "relu":
            raise ValueError("only relu activations are supported")


@dataclass(frozen=True)
class AttentionSpec:
    input_dim: int = 8
    heads: int = 2
    head_dim: int = 4
    layers: int = 2
    ffn_dim: int | None = None
    eps: float = 1e-5

    @property
    def embed_dim(self) -> int:
        return self.heads * self.head_dim

    @property
    def ffn_width(self) -> int:
        return self.ffn_dim or 2 * self.embed_dim


@dataclass(frozen=True)
class IdentitySpec:
    """Scores are the first input column; no parameters."""
    input_dim: int = 1


@dataclass
class ParamSet:
    params: dict[str, ad.Node] = field(default_factory=dict)
    seed: int = 0

    def __getitem__(self, key):
        return self.params[key]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def values(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def replaced(self, new_values: dict[str, np.ndarray]) -> "ParamSet":
        return ParamSet({k: ad.leaf(new_values[k]) for k in self.params}, self.seed)


def _uniform(rng, fan_in: int, shape) -> ad.Node:
    a = 1.0 / np.sqrt(fan_in)
    return ad.leaf(rng.uniform(-a, a, size=shape))


def init_params(spec, seed: int) -> ParamSet:
    """Uniform(-a, a) weights and biases with ``a = 1/sqrt(fan_in)``.

    Layer-norm gains start at one and shifts at zero.
    """
    rng = np.random.default_rng(seed)
    p: dict[str, ad.Node] = {}
    if isinstance(spec, IdentitySpec):
        return ParamSet(p, seed)
    if isinstance(spec, MLPSpec):
        widths = (spec.input_dim, *spec.hidden, 1)
        for k, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            p[f"W{k}"] = _uniform(rng, fi, (fi, fo))
            p[f"b{k}"] = _uniform(rng, fi, (fo,))
        return ParamSet(p, seed)
    if isinstance(spec, AttentionSpec):
        d, e, dm, f = spec.input_dim, spec.embed_dim, spec.head_dim, spec.ffn_width
        p["embed.W"] = _uniform(rng, d, (d, e))
        p["embed.b"] = _uniform(rng, d, (e,))
        for layer in range(spec.layers):
            pre = f"L{layer}."
            for h in range(spec.heads):
                for name in ("q", "k", "v"):
                    p[f"{pre}W{name}{h}"] = _uniform(rng, e, (e, dm))
            p[pre + "Wo"] = _uniform(rng, e, (e, e))
            p[pre + "ln1.g"] = ad.leaf(np.ones(e))
            p[pre + "ln1.b"] = ad.leaf(np.zeros(e))
            p[pre + "ff.W1"] = _uniform(rng, e, (e, f))
            p[pre + "ff.b1"] = _uniform(rng, e, (f,))
            p[pre + "ff.W2"] = _uniform(rng, f, (f, e))
            p[pre + "ff.b2"] = _uniform(rng, f, (e,))
            p[pre + "ln2.g"] = ad.leaf(np.ones(e))
            p[pre + "ln2.b"] = ad.leaf(np.zeros(e))
        p["head.W"] = _uniform(rng, e, (e, 1))
        p["head.b"] = _uniform(rng, e, (1,))
        return ParamSet(p, seed)
    raise TypeError(f"unknown model spec {spec!r}")


def _affine(X: ad.Node, W: ad.Node, b: ad.Node) -> ad.Node:
    return ad.matmul(X, W) + ad.broadcast_rows(b, X.shape[0])


def _check_input(X: ad.Node, d: int):
    if X.value.ndim != 2 or X.shape[1] != d:
        raise ValueError(f"expected input of shape (n, {d}), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("empty sequence")


def forward_mlp(spec: MLPSpec, params: ParamSet, X) -> ad.Node:
    X = ad._as_node(X)
    _check_input(X, spec.input_dim)
    h = X
    depth = len(spec.hidden) + 1
    for k in range(depth):
        h = _affine(h, params[f"W{k}"], params[f"b{k}"])
        if k < depth - 1:
            h = ad.relu(h)
    return ad.reshape(h, (-1,))


def _mha(spec: AttentionSpec, params: ParamSet, pre: str, Z: ad.Node) -> ad.Node:
    scale = 1.0 / np.sqrt(spec.head_dim)
    heads = []
    for h in range(spec.heads):
        Q = ad.matmul(Z, params[f"{pre}Wq{h}"])
        K = ad.matmul(Z, params[f"{pre}Wk{h}"])
        V = ad.matmul(Z, params[f"{pre}Wv{h}"])
        A = ad.softmax_rows(ad.matmul(Q, ad.transpose(K)) * scale)
        heads.append(ad.matmul(A, V))
    return ad.matmul(ad.concat(heads, axis=1), params[pre + "Wo"])


def forward_attention(spec: AttentionSpec, params: ParamSet, X) -> ad.Node:
    """Embedding, then per layer ``Z = LN(Z + mha(Z))`` and ``Z = LN(Z + ffn(Z))``."""
    X = ad._as_node(X)
    _check_input(X, spec.input_dim)
    Z = ad.relu(_affine(X, params["embed.W"], params["embed.b"]))
    for layer in range(spec.layers):
        pre = f"L{layer}."
        Z = ad.layer_norm_rows(Z + _mha(spec, params, pre, Z),
                               params[pre + "ln1.g"], params[pre + "ln1.b"], spec.eps)
        ff = _affine(ad.relu(_affine(Z, params[pre + "ff.W1"], params[pre + "ff.b1"])),
                     params[pre + "ff.W2"], params[pre + "ff.b2"])
        Z = ad.layer_norm_rows(Z + ff, params[pre + "ln2.g"], params[pre + "ln2.b"], spec.eps)
    return ad.reshape(_affine(Z, params["head.W"], params["head.b"]), (-1,))


def forward_identity(spec: IdentitySpec, params: ParamSet, X) -> ad.Node:
    X = ad._as_node(X)
    _check_input(X, spec.input_dim)
    return ad.reshape(ad.take(X, np.arange(X.shape[0]) * X.shape[1]), (-1,))


def forward_fn(spec) -> Callable:
    if isinstance(spec, MLPSpec):
        return forward_mlp
    if isinstance(spec, AttentionSpec):
        return forward_attention
    if isinstance(spec, IdentitySpec):
        return forward_identity
    raise TypeError(f"unknown model spec {spec!r}")


def score(spec, params: ParamSet, X) -> ad.Node:
    return forward_fn(spec)(spec, params, X)


def check_equivariance(forward: Callable[[ad.Node], ad.Node], X, trials: int = 10,
                       seed: int = 0) -> float:
    """Max ``|forward(X[perm]) - forward(X)[perm]|`` over random permutations.

    ``forward`` maps an (n, d) array or Node to n scores.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    X = np.asarray(X.value if isinstance(X, ad.Node) else X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    with ad.no_grad():
        base = np.asarray(_values(forward(ad.const(X))))
        worst = 0.0
        for _ in range(trials):
            perm = rng.permutation(X.shape[0])
            out = np.asarray(_values(forward(ad.const(X[perm]))))
            worst = max(worst, float(np.max(np.abs(out - base[perm]))))
    return worst


def _values(x):
    return x.value if isinstance(x, ad.Node) else x


def model_spec_from_config(cfg: dict, input_dim: int):
    kind = cfg.get("model", "mlp")
    if kind == "mlp":
        hidden = cfg.get("hidden", [32])
        if isinstance(hidden, int):
            hidden = [hidden]
        return MLPSpec(input_dim, tuple(hidden))
    if kind == "attention":
        return AttentionSpec(input_dim, heads=int(cfg.get("heads", 2)),
                             head_dim=int(cfg.get("head_dim", 4)),
                             layers=int(cfg.get("layers", 2)))
    if kind == "identity":
        return IdentitySpec(input_dim)
    raise ValueError(f"unknown model {kind!r}; expected mlp, attention or identity")
