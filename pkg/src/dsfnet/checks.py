"""Gradient-check and property suites shared by the CLI and the tests.

Every check returns a :class:`CheckResult`; a suite is a list of them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import adgraph as ad
from .models import AttentionSpec, MLPSpec, check_equivariance, init_params, score
from .permops import (apply_permutation, gt_permutation, is_doubly_stochastic,
                      is_hard_permutation, split_hard_permutation)
from .sigmoid import SigmoidKind, SigmoidSpec, eval_sigmoid, verify_sigmoid_axioms
from .sortnet import build_odd_even, execute, stage_permutation
from .swapcore import SwapMode, error_free_swap, iterate_swaps, soft_swap

__all__ = ["CheckResult", "IMPLEMENTED_KINDS", "gradient_suite", "check_doubly_stochastic",
           "check_accumulation", "check_error_free_forward", "check_error_free_gradients",
           "check_split", "check_axioms", "check_equivariance_suite", "property_suite"]

IMPLEMENTED_KINDS = (SigmoidKind.LOGISTIC, SigmoidKind.RECIPROCAL, SigmoidKind.CAUCHY,
                     SigmoidKind.OPTIMAL)

GRAD_TOL = 1e-4
GRAD_H = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tol: float
    detail: str = ""

    def row(self) -> dict:
        return {"check": self.name, "value": f"{self.value:.6g}", "tol": f"{self.tol:.6g}",
                "passed": int(self.passed), "detail": self.detail}


def _grad(name: str, f, points, h=GRAD_H, tol=GRAD_TOL) -> CheckResult:
    err = float(ad.grad_check(f, points, h=h))
    return CheckResult(name, bool(err < tol), err, tol)


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------


def _tiny_model_check(rng) -> CheckResult:
    """Scores -> soft network -> soft and hard-style losses, for n=3, d=2.

    The hard loss is evaluated on the soft matrix: straight-through entries are
    piecewise constant forward, so finite differences cannot see them.
    """
    from .training import loss_hard, loss_soft  # local import avoids a cycle

    spec = MLPSpec(2, (1,))
    params = init_params(spec, 0)
    names = list(params)
    X = rng.normal(size=(3, 2))
    keys = X @ np.array([1.0, -0.5])
    gt = gt_permutation(keys).perm
    plan = build_odd_even(3)
    sig = SigmoidSpec(SigmoidKind.OPTIMAL, 0.5)

    def f(*vals):
        from .models import ParamSet
        ps = ParamSet(dict(zip(names, vals)))
        s = score(spec, ps, X)
        _, P = execute(plan, s, sig, SwapMode.SOFT)
        return loss_soft(P, gt) + loss_hard(P, gt, X) * 0.1

    # draw until the single hidden unit is active on every row, so the check
    # exercises the whole chain instead of a dead relu
    while True:
        points = [params[k].value + rng.normal(scale=0.5, size=params[k].shape)
                  for k in names]
        vals = dict(zip(names, points))
        if np.all(X @ vals["W0"] + vals["b0"] > 0.1):
            break
    res = _grad("end_to_end_tiny", f, points)
    leaves = [ad.leaf(p) for p in points]
    grads = ad.backward(f(*leaves))
    norm = float(sum(np.abs(grads[x]).sum() for x in leaves))
    return CheckResult(res.name, res.passed and norm > 0, res.value, res.tol,
                       f"grad l1 {norm:.3g}")


def gradient_suite(seed: int = 0, points: int = 20) -> list[CheckResult]:
    """Central-difference checks for every differentiable building block."""
    from .training import loss_hard, loss_soft

    rng = np.random.default_rng(seed)
    out = []
    for kind in IMPLEMENTED_KINDS:
        for beta in (0.5, 1.0, 4.0):
            spec = SigmoidSpec(kind, beta)
            x = rng.uniform(-3.0, 3.0, size=points) / beta
            out.append(_grad(f"sigmoid_{kind.value}_b{beta:g}",
                             lambda v, s=spec: ad.total(eval_sigmoid(s, v) * 1.0), [x]))
    for kind in IMPLEMENTED_KINDS:
        spec = SigmoidSpec(kind, 1.0)
        wx, wy = rng.normal(size=points), rng.normal(size=points)

        def f(x, y, spec=spec, wx=wx, wy=wy):
            o = soft_swap(x, y, spec)
            return ad.total(o.lo * wx + o.hi * wy)

        out.append(_grad(f"soft_swap_{kind.value}", f,
                         [rng.uniform(-3, 3, points), rng.uniform(-3, 3, points)]))

    n = 5
    gt = gt_permutation(rng.normal(size=n)).perm
    M = rng.uniform(0.05, 0.95, size=(n, n))
    out.append(_grad("loss_soft", lambda p: loss_soft(p, gt), [M]))
    X = rng.normal(size=(n, 3))
    out.append(_grad("loss_hard", lambda p: loss_hard(p, gt, X), [M]))
    out.append(_grad("loss_hard_x", lambda x: loss_hard(ad.const(M), gt, x), [X]))

    W = rng.normal(size=(4, 6))
    out.append(_grad("softmax_rows", lambda z: ad.total(ad.softmax_rows(z) * W),
                     [rng.normal(scale=2.0, size=(4, 6))]))
    out.append(_grad("layer_norm_rows",
                     lambda z, g, b: ad.total(ad.layer_norm_rows(z, g, b, 1e-5) * W),
                     [rng.normal(size=(4, 6)), rng.normal(size=6), rng.normal(size=6)]))

    aspec = AttentionSpec(input_dim=2, heads=2, head_dim=2, layers=1)
    aparams = init_params(aspec, seed)
    anames = list(aparams)
    Xa = rng.normal(size=(3, 2))
    wa = rng.normal(size=3)

    def fa(*vals):
        from .models import ParamSet
        return ad.total(score(aspec, ParamSet(dict(zip(anames, vals))), Xa) * wa)

    out.append(_grad("attention_scorer", fa, [aparams[k].value for k in anames]))
    out.append(_tiny_model_check(rng))
    return out


# --------------------------------------------------------------------------
# properties
# --------------------------------------------------------------------------


def _random_vector(rng, n: int) -> np.ndarray:
    """Uniform values, or small integers so that duplicates are common."""
    if rng.random() < 0.5:
        return rng.uniform(-10.0, 10.0, size=n)
    return rng.integers(-3, 4, size=n).astype(np.float64)


def check_doubly_stochastic(trials: int = 1000, max_n: int = 32, seed: int = 0,
                            beta: float = 1.0) -> list[CheckResult]:
    """Composed matrices are doubly stochastic; hard ones are permutations."""
    rng = np.random.default_rng(seed)
    out = []
    for mode in (SwapMode.SOFT, SwapMode.ERROR_FREE, SwapMode.HARD):
        tol = 1e-6 if mode is SwapMode.SOFT else 1e-9
        worst = 0.0
        bad = 0
        for _ in range(trials):
            n = int(rng.integers(1, max_n + 1))
            kind = IMPLEMENTED_KINDS[int(rng.integers(len(IMPLEMENTED_KINDS)))]
            spec = SigmoidSpec(kind, beta * float(rng.uniform(0.1, 10.0)))
            with ad.no_grad():
                _, P = execute(build_odd_even(n), _random_vector(rng, n), spec, mode)
            v = P.value
            dev = max(float(np.max(np.abs(v.sum(axis=0) - 1.0))),
                      float(np.max(np.abs(v.sum(axis=1) - 1.0))),
                      float(max(0.0, -v.min())))
            worst = max(worst, dev)
            ok = is_doubly_stochastic(P, tol)
            if mode is not SwapMode.SOFT:
                ok = ok and is_hard_permutation(P)
            bad += not ok
        out.append(CheckResult(f"doubly_stochastic_{mode.value}", bad == 0, worst, tol,
                               f"{bad} of {trials} failed"))
    return out


def check_accumulation(x: float = 4.0, y: float = 0.0, beta: float = 1.0,
                       max_iter: int = 10_000, tol: float = 1e-6) -> list[CheckResult]:
    """Repeated logistic swaps shrink the gap to zero around the midpoint."""
    spec = SigmoidSpec(SigmoidKind.LOGISTIC, beta)
    traj = iterate_swaps(x, y, spec, max_iter)
    gap = np.abs(traj[:, 1] - traj[:, 0])
    below = np.nonzero(gap < tol)[0]
    reached = below.size > 0
    k = int(below[0]) if reached else max_iter - 1
    mid = (x + y) / 2.0
    final = traj[k]
    off = float(np.max(np.abs(final - mid)))
    positive = gap[gap > 0]
    shrinking = bool(np.all(np.diff(positive) < 0))
    ef = iterate_swaps(x, y, spec, 50, SwapMode.ERROR_FREE)
    ef_const = bool(np.all(ef[:, 0] == min(x, y)) and np.all(ef[:, 1] == max(x, y)))
    return [
        CheckResult("accumulation_gap_vanishes", reached, float(gap[k]), tol,
                    f"after {k + 1} swaps"),
        CheckResult("accumulation_midpoint", reached and off < tol, off, tol),
        CheckResult("accumulation_monotone", shrinking, float(positive.size), 0.0),
        CheckResult("accumulation_error_free_constant", ef_const, 0.0, 0.0),
    ]


def check_error_free_forward(trials: int = 10_000, max_n: int = 32,
                             seed: int = 0) -> CheckResult:
    """Error-free network output equals ``np.sort`` bit for bit."""
    rng = np.random.default_rng(seed)
    bad = 0
    for t in range(trials):
        n = int(rng.integers(1, max_n + 1))
        s = _random_vector(rng, n)
        spec = SigmoidSpec(IMPLEMENTED_KINDS[t % len(IMPLEMENTED_KINDS)],
                           float(rng.uniform(0.1, 50.0)))
        with ad.no_grad():
            out, P = execute(build_odd_even(n), s, spec, SwapMode.ERROR_FREE)
        ok = (np.array_equal(out.value, np.sort(s, kind="stable"))
              and np.array_equal(P.value.T @ s, out.value))
        bad += not ok
    return CheckResult("error_free_forward_exact", bad == 0, float(bad), 0.0,
                       f"{bad} of {trials} mismatched")


def _vjp(outputs, cotangents, inputs) -> list[np.ndarray]:
    total = None
    for o, c in zip(outputs, cotangents):
        term = ad.total(o * c)
        total = term if total is None else total + term
    grads = ad.backward(total)
    return [grads.get(x, np.zeros(x.shape)) for x in inputs]


def check_error_free_gradients(trials: int = 10_000, stage_trials: int = 200,
                               max_n: int = 32, seed: int = 0) -> list[CheckResult]:
    """Error-free and soft gradients agree exactly at identical inputs.

    Pairs are checked one swap at a time; whole stages are checked at every
    stage input along the error-free trajectory, for both the value output and
    the stage matrix.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-10, 10, size=trials)
    y = np.where(rng.random(trials) < 0.1, x, rng.uniform(-10, 10, size=trials))
    wl, wh = rng.normal(size=trials), rng.normal(size=trials)
    pair_bad = 0
    for kind in IMPLEMENTED_KINDS:
        spec = SigmoidSpec(kind, 1.0)
        grads = []
        for fn in (soft_swap, error_free_swap):
            xs, ys = ad.leaf(x), ad.leaf(y)
            o = fn(xs, ys, spec)
            grads.append(_vjp([o.lo, o.hi, o.p_keep, o.p_swap], [wl, wh, wl, wh], [xs, ys]))
        pair_bad += sum(not np.array_equal(a, b) for a, b in zip(*grads))

    stage_bad = 0
    stages_seen = 0
    for t in range(stage_trials):
        n = int(rng.integers(2, max_n + 1))
        spec = SigmoidSpec(IMPLEMENTED_KINDS[t % len(IMPLEMENTED_KINDS)],
                           float(rng.uniform(0.1, 5.0)))
        s = _random_vector(rng, n)
        for stage in build_odd_even(n).stages:
            cv, cp = rng.normal(size=n), rng.normal(size=(n, n))
            grads = []
            for mode in (SwapMode.SOFT, SwapMode.ERROR_FREE):
                leaf = ad.leaf(s)
                out, P = stage_permutation(stage, leaf, spec, mode)
                grads.append(_vjp([out, P.entries], [cv, cp], [leaf])[0])
                if mode is SwapMode.ERROR_FREE:
                    s_next = out.value
            stage_bad += not np.array_equal(grads[0], grads[1])
            stages_seen += 1
            s = s_next
    return [
        CheckResult("error_free_grad_pairs", pair_bad == 0, float(pair_bad), 0.0,
                    f"{trials} pairs x {len(IMPLEMENTED_KINDS)} sigmoids"),
        CheckResult("error_free_grad_stages", stage_bad == 0, float(stage_bad), 0.0,
                    f"{stages_seen} stages"),
    ]


def check_split(trials: int = 1000, max_n: int = 32, seed: int = 0) -> CheckResult:
    """Split blocks are permutations that sort their own half."""
    rng = np.random.default_rng(seed)
    bad = 0
    for t in range(trials):
        n = int(rng.integers(2, max_n + 1))
        s = _random_vector(rng, n)
        if t % 2:
            with ad.no_grad():
                _, P = execute(build_odd_even(n), s, SigmoidSpec(), SwapMode.ERROR_FREE)
        else:
            P = gt_permutation(s).perm
        n1 = int(rng.integers(1, n))
        A, B = split_hard_permutation(P, n1, n - n1)
        ok = is_hard_permutation(A) and is_hard_permutation(B)
        for block, half in ((A, s[:n1]), (B, s[n1:])):
            got = apply_permutation(block, half).value
            ok = ok and np.array_equal(got, np.sort(half)) and A.n + B.n == n
        bad += not ok
    return CheckResult("split_blocks_sort_halves", bad == 0, float(bad), 0.0,
                       f"{bad} of {trials} failed")


def check_axioms() -> list[CheckResult]:
    out = []
    for kind in IMPLEMENTED_KINDS:
        rep = verify_sigmoid_axioms(SigmoidSpec(kind, 1.0))
        failed = [k for k, v in rep.as_dict().items() if not v]
        out.append(CheckResult(f"axioms_{kind.value}", rep.passed, float(len(failed)), 0.0,
                               " ".join(failed)))
    return out


def check_equivariance_suite(trials: int = 100, seed: int = 0,
                             tol: float = 1e-9) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(7, 8))
    out = []
    for name, spec in (("mlp", MLPSpec(8, (32,))), ("attention", AttentionSpec(8))):
        params = init_params(spec, seed)
        err = check_equivariance(lambda z, s=spec, p=params: score(s, p, z), X, trials, seed)
        out.append(CheckResult(f"equivariance_{name}", err < tol, err, tol))
    return out


def property_suite(trials: int = 1000, seed: int = 0) -> list[CheckResult]:
    """Every property check at ``trials`` random cases each."""
    out = check_axioms()
    out += check_doubly_stochastic(trials, seed=seed)
    out += check_accumulation()
    out.append(check_error_free_forward(trials, seed=seed))
    out += check_error_free_gradients(trials, stage_trials=max(1, trials // 20), seed=seed)
    out.append(check_split(trials, seed=seed))
    out += check_equivariance_suite(min(trials, 100), seed=seed)
    return out
