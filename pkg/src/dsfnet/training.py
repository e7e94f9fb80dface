"""Losses, AdamW, synthetic tasks and the train/evaluate loops.

A training step scores each sequence, sorts the scores with the odd-even
network in both soft and error-free modes, and minimizes
``L_soft + lambda * L_hard`` averaged over the batch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import adgraph as ad
from .models import IdentitySpec, MLPSpec, ParamSet, init_params, model_spec_from_config, score
from .permops import (PermMatrix, accuracy_metrics, apply_permutation, gt_permutation,
                      split_hard_permutation)
from .sigmoid import SigmoidKind, SigmoidSpec
from .sortnet import build_odd_even, execute
from .swapcore import SwapMode, parse_mode

__all__ = ["DEFAULT_BETAS", "default_beta", "TrainConfig", "SyntheticTask", "Sample",
           "loss_soft", "loss_hard", "combined_loss", "AdamState", "optimizer_step",
           "gen_task", "EvalResult", "evaluate", "train_run"]

log = logging.getLogger(__name__)

# steepness per sequence length used for the balancing-hyperparameter study
DEFAULT_BETAS = {3: 6.0, 5: 20.0, 7: 29.0, 9: 32.0, 15: 25.0, 32: 124.0}

CLAMP_EPS = 1e-12


def default_beta(n: int) -> float:
    """Tabulated steepness for ``n``; other lengths take the nearest entry."""
    if n in DEFAULT_BETAS:
        return DEFAULT_BETAS[n]
    nearest = min(DEFAULT_BETAS, key=lambda m: (abs(m - n), m))
    return DEFAULT_BETAS[nearest]


@dataclass(frozen=True)
class TrainConfig:
    n: int = 5
    batch: int = 16
    n_eval: int = 1000
    lam: float = 0.1
    sigmoid: str = "optimal"
    beta: float | None = None
    lr: float = 1e-3
    lr_decay: tuple[float, int] = (0.5, 2000)
    steps: int = 3000
    seed: int = 42
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    eval_every: int = 500
    task: str = "vector"
    dim: int = 8
    split_hard: bool = False

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.n < 1 or self.batch < 1 or self.steps < 0 or self.eval_every < 1:
            raise ValueError("n, batch, eval_every must be positive and steps non-negative")
        object.__setattr__(self, "lr_decay", tuple(self.lr_decay))
        object.__setattr__(self, "betas", tuple(self.betas))

    @property
    def sigmoid_spec(self) -> SigmoidSpec:
        beta = self.beta if self.beta is not None else default_beta(self.n)
        return SigmoidSpec(SigmoidKind(self.sigmoid), beta)

    def lr_at(self, step: int) -> float:
        factor, every = self.lr_decay
        return self.lr * factor ** (step // every) if every > 0 else self.lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_decay"] = list(self.lr_decay)
        d["betas"] = list(self.betas)
        return d


# --------------------------------------------------------------------------
# tasks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticTask:
    """Scalar: values uniform on [low, high], key = value.

    Vector: rows ~ N(0, I_d) and key = tanh(x @ w + b) for a fixed random
    ``(w, b)`` drawn from ``seed``.
    """
    kind: str = "vector"
    dim: int = 8
    seed: int = 0
    low: float = -10.0
    high: float = 10.0

    def __post_init__(self):
        if self.kind not in ("scalar", "vector"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "scalar" and self.dim != 1:
            object.__setattr__(self, "dim", 1)

    def hidden_map(self) -> tuple[np.ndarray, float]:
        rng = np.random.default_rng([self.seed, 7919])
        w = rng.normal(0.0, 1.0 / np.sqrt(self.dim), size=self.dim)
        b = float(rng.normal(0.0, 0.1))
        return w, b

    def keys(self, X: np.ndarray) -> np.ndarray:
        if self.kind == "scalar":
            return X[:, 0].copy()
        w, b = self.hidden_map()
        return np.tanh(X @ w + b)


@dataclass(frozen=True)
class Sample:
    X: np.ndarray
    keys: np.ndarray
    gt: PermMatrix


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, (list, tuple)):
        return np.random.default_rng([int(s) for s in seed])
    return np.random.default_rng(seed)


def gen_task(task: SyntheticTask, n: int, N: int, seed) -> list[Sample]:
    rng = _rng(seed)
    out = []
    for _ in range(N):
        if task.kind == "scalar":
            X = rng.uniform(task.low, task.high, size=(n, 1))
        else:
            X = rng.normal(size=(n, task.dim))
        keys = task.keys(X)
        out.append(Sample(X, keys, gt_permutation(keys).perm))
    return out


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------


def _entries(P) -> ad.Node:
    return P.entries if isinstance(P, PermMatrix) else ad._as_node(P)


def loss_soft(P_soft, P_gt) -> ad.Node:
    """Entrywise binary cross-entropy between soft and ground-truth matrices."""
    P = _entries(P_soft)
    G = _entries(P_gt).value
    if P.shape != G.shape:
        raise ValueError(f"size mismatch {P.shape} vs {G.shape}")
    p = ad.clamp(P, CLAMP_EPS, 1.0 - CLAMP_EPS)
    ll = ad.log(p) * G + ad.log(1.0 - p) * (1.0 - G)
    return -ad.total(ll)


def loss_hard(P_hard, P_gt, X, split: bool = False) -> ad.Node:
    """Squared Frobenius distance between ``P_hard.T @ X`` and ``P_gt.T @ X``.

    With ``split`` the matrices and rows are cut at ``n // 2`` and the two
    half losses are summed.
    """
    X = ad._as_node(X)
    if X.value.ndim == 1:
        X = ad.reshape(X, (-1, 1))
    P = _entries(P_hard)
    if P.shape[0] != X.shape[0]:
        raise ValueError(f"P is {P.shape} but X has {X.shape[0]} rows")
    if not split or P.shape[0] < 2:
        diff = apply_permutation(P, X) - apply_permutation(_entries(P_gt), X)
        return ad.total(diff * diff)
    n = P.shape[0]
    n1 = n // 2
    hard = P_hard if isinstance(P_hard, PermMatrix) else PermMatrix(P, "hard")
    gt = P_gt if isinstance(P_gt, PermMatrix) else PermMatrix(_entries(P_gt), "hard")
    parts = []
    for (Ph, Pg), rows in zip(zip(split_hard_permutation(hard, n1, n - n1),
                                  split_hard_permutation(gt, n1, n - n1)),
                              (np.arange(n1), np.arange(n1, n))):
        Xr = ad.take(X, rows[:, None] * X.shape[1] + np.arange(X.shape[1])[None, :])
        diff = apply_permutation(Ph, Xr) - apply_permutation(Pg, Xr)
        parts.append(ad.total(diff * diff))
    return parts[0] + parts[1]


def combined_loss(P_soft, P_hard, P_gt, X, lam: float, split: bool = False) -> ad.Node:
    ls = loss_soft(P_soft, P_gt)
    if lam == 0:
        return ls
    return ls + loss_hard(P_hard, P_gt, X, split=split) * lam


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def optimizer_step(params: ParamSet, grads: dict[str, np.ndarray], state: AdamState,
                   lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                   weight_decay: float = 0.0) -> tuple[ParamSet, AdamState]:
    """One AdamW update with bias correction and decoupled weight decay."""
    b1, b2 = betas
    t = state.t + 1
    new_vals, m_out, v_out = {}, {}, {}
    for name, node in params.params.items():
        p = node.value
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        if m.shape != p.shape or v.shape != p.shape:
            raise ValueError(f"optimizer state shape mismatch for {name}")
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p = p * (1 - lr * weight_decay) - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_vals[name], m_out[name], v_out[name] = p, m, v
    return params.replaced(new_vals), AdamState(m_out, v_out, t)


# --------------------------------------------------------------------------
# train / evaluate
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EvalResult:
    acc_em: float
    acc_ew: float
    loss_soft: float
    loss_hard: float
    loss_total: float


def _sequence_loss(model_spec, params, sample: Sample, plan, spec, lam, split):
    s = score(model_spec, params, sample.X)
    _, P_soft = execute(plan, s, spec, SwapMode.SOFT)
    _, P_hard = execute(plan, s, spec, SwapMode.ERROR_FREE)
    ls = loss_soft(P_soft, sample.gt)
    lh = loss_hard(P_hard, sample.gt, sample.X, split=split)
    return s, P_soft, P_hard, ls, lh


def evaluate(params: ParamSet, model_spec, task: SyntheticTask, n: int, N: int,
             spec: SigmoidSpec, mode=SwapMode.ERROR_FREE, seed=0, data=None,
             lam: float = 0.1, split: bool = False) -> EvalResult:
    """Metrics and mean losses on held-out sequences, without updating anything.

    Accuracy compares the network's ranking of the ground-truth keys with the
    true order.  ``data`` overrides generation from ``(task, n, N, seed)``.
    """
    mode = parse_mode(mode)
    data = gen_task(task, n, N, seed) if data is None else data
    plan = build_odd_even(n)
    triples = []
    ls_sum = lh_sum = 0.0
    with ad.no_grad():
        for sample in data:
            s, P_soft, P_hard, ls, lh = _sequence_loss(model_spec, params, sample, plan,
                                                       spec, lam, split)
            if mode is SwapMode.SOFT:
                P = P_soft
            elif mode is SwapMode.ERROR_FREE:
                P = P_hard
            else:
                _, P = execute(plan, s, spec, SwapMode.HARD)
            triples.append((sample.keys, P, sample.gt))
            ls_sum += ls.item()
            lh_sum += lh.item()
    em, ew = accuracy_metrics(triples)
    k = len(data)
    return EvalResult(em, ew, ls_sum / k, lh_sum / k, (ls_sum + lam * lh_sum) / k)


def _task_for(config: TrainConfig) -> SyntheticTask:
    return SyntheticTask(config.task, config.dim, seed=config.seed)


def train_run(config: TrainConfig, model_spec=None, callback=None):
    """Train a scorer end to end; returns ``(params, history)``.

    ``history`` holds one dict per evaluation with keys ``step, loss_soft,
    loss_hard, loss_total, acc_em, acc_ew, lr``.  Evaluation uses held-out
    sequences in error-free mode.
    """
    task = _task_for(config)
    if model_spec is None:
        model_spec = MLPSpec(task.dim, (32,))
    spec = config.sigmoid_spec
    plan = build_odd_even(config.n)
    params = init_params(model_spec, config.seed)
    state = AdamState()
    eval_data = gen_task(task, config.n, config.n_eval, [config.seed, 2])
    history = []
    trainable = not isinstance(model_spec, IdentitySpec)

    for step in range(config.steps + 1):
        lr = config.lr_at(step)
        if step % config.eval_every == 0 or step == config.steps:
            res = evaluate(params, model_spec, task, config.n, config.n_eval, spec,
                           SwapMode.ERROR_FREE, data=eval_data, lam=config.lam,
                           split=config.split_hard)
            row = {"step": step, "loss_soft": res.loss_soft, "loss_hard": res.loss_hard,
                   "loss_total": res.loss_total, "acc_em": res.acc_em,
                   "acc_ew": res.acc_ew, "lr": lr}
            history.append(row)
            log.info("step %d acc_em %.4f acc_ew %.4f loss %.4f", step, res.acc_em,
                     res.acc_ew, res.loss_total)
            if callback is not None:
                callback(row)
        if step == config.steps or not trainable:
            if not trainable and step < config.steps:
                continue
            break
        batch = gen_task(task, config.n, config.batch, [config.seed, 1, step])
        terms = []
        for sample in batch:
            *_, ls, lh = _sequence_loss(model_spec, params, sample, plan, spec,
                                        config.lam, config.split_hard)
            terms.append(ls + lh * config.lam if config.lam else ls)
        loss = terms[0]
        for t in terms[1:]:
            loss = loss + t
        loss = loss * (1.0 / len(terms))
        if not math.isfinite(loss.item()):
            raise ad.NonFiniteError(f"non-finite loss {loss.item()} at step {step}")
        grads = ad.backward(loss)
        by_name = {name: grads.get(node) for name, node in params.params.items()}
        params, state = optimizer_step(params, by_name, state, lr, config.betas,
                                       config.adam_eps, config.weight_decay)
    return params, history


def config_from_dict(d: dict) -> TrainConfig:
    fields = TrainConfig.__dataclass_fields__
    kwargs = {k: v for k, v in d.items() if k in fields}
    if "lambda" in d:
        kwargs["lam"] = d["lambda"]
    return TrainConfig(**kwargs)
