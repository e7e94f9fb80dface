"""Monotonic sigmoid functions used inside differentiable swaps.

Each kind is registered as an elementwise primitive of :mod:`dsfnet.adgraph`
with a closed-form derivative.  All kinds are scaled by a steepness ``beta``:
``sigma(x) = f(beta * x)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import adgraph as ad

__all__ = ["SigmoidKind", "SigmoidSpec", "eval_sigmoid", "sigmoid_values",
           "tail_delta", "AxiomReport", "verify_sigmoid_axioms", "parse_kind"]


class SigmoidKind(enum.Enum):
    LOGISTIC = "logistic"
    LOGISTIC_ART = "logistic_art"
    RECIPROCAL = "reciprocal"
    CAUCHY = "cauchy"
    OPTIMAL = "optimal"


def parse_kind(name: str) -> SigmoidKind:
    try:
        return SigmoidKind(name.lower())
    except ValueError:
        valid = ", ".join(k.value for k in SigmoidKind)
        raise ValueError(f"unknown sigmoid {name!r}; expected one of {valid}") from None


@dataclass(frozen=True)
class SigmoidSpec:
    kind: SigmoidKind = SigmoidKind.OPTIMAL
    beta: float = 1.0

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", parse_kind(self.kind))
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")

    @property
    def name(self) -> str:
        return self.kind.value


def _logistic(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _logistic_d(z):
    e = np.exp(-np.abs(z))
    return e / ((1.0 + e) * (1.0 + e))


def _reciprocal(z):
    return 0.5 * z / (1.0 + np.abs(z)) + 0.5


def _reciprocal_d(z):
    a = 1.0 + np.abs(z)
    return 0.5 / (a * a)


def _cauchy(z):
    return np.arctan(z) / np.pi + 0.5


def _cauchy_d(z):
    return 1.0 / (np.pi * (1.0 + z * z))


def _optimal(z):
    z = np.asarray(z, dtype=np.float64)
    out = z + 0.5
    lo = z < -0.25
    hi = z > 0.25
    out = np.where(lo, -1.0 / (16.0 * np.where(lo, z, -1.0)), out)
    return np.where(hi, 1.0 - 1.0 / (16.0 * np.where(hi, z, 1.0)), out)


def _optimal_d(z):
    z = np.asarray(z, dtype=np.float64)
    tail = np.abs(z) > 0.25
    zz = np.where(tail, z, 1.0)
    return np.where(tail, 1.0 / (16.0 * zz * zz), 1.0)


_IMPL: dict[SigmoidKind, tuple[Callable, Callable]] = {
    SigmoidKind.LOGISTIC: (_logistic, _logistic_d),
    SigmoidKind.RECIPROCAL: (_reciprocal, _reciprocal_d),
    SigmoidKind.CAUCHY: (_cauchy, _cauchy_d),
    SigmoidKind.OPTIMAL: (_optimal, _optimal_d),
}


def _impl(kind: SigmoidKind):
    if kind not in _IMPL:
        raise NotImplementedError(
            "logistic_art is not available: its input transformation is not "
            "defined in this package")
    return _IMPL[kind]


def sigmoid_values(spec: SigmoidSpec, x) -> np.ndarray:
    """Plain numpy evaluation, no graph."""
    fn, _ = _impl(spec.kind)
    return fn(spec.beta * np.asarray(x, dtype=np.float64))


def eval_sigmoid(spec: SigmoidSpec, x) -> ad.Node:
    fn, dfn = _impl(spec.kind)
    beta = spec.beta
    return ad.unary(x, lambda v: fn(beta * v), lambda v: beta * dfn(beta * v),
                    f"sigmoid_{spec.name}")


def tail_delta(spec: SigmoidSpec, bound: float) -> float:
    """Closed-form ``1 - sigma(bound)`` (equivalently ``sigma(-bound)``)."""
    z = spec.beta * bound
    kind = spec.kind
    if kind is SigmoidKind.LOGISTIC:
        return float(np.exp(-z) / (1.0 + np.exp(-z)))
    if kind is SigmoidKind.RECIPROCAL:
        return 1.0 / (2.0 * (1.0 + z))
    if kind is SigmoidKind.CAUCHY:
        return 0.5 - float(np.arctan(z)) / np.pi
    if kind is SigmoidKind.OPTIMAL:
        return 1.0 / (16.0 * z) if z > 0.25 else 0.5 - z
    raise NotImplementedError(kind)


@dataclass
class AxiomReport:
    non_decreasing: bool
    upper_limit: bool
    lower_limit: bool
    half_at_zero: bool
    symmetric: bool
    delta: float

    def as_dict(self) -> dict[str, bool]:
        return {
            "i_non_decreasing": self.non_decreasing,
            "ii_upper_limit": self.upper_limit,
            "iii_lower_limit": self.lower_limit,
            "iv_half_at_zero": self.half_at_zero,
            "v_symmetric": self.symmetric,
        }

    @property
    def passed(self) -> bool:
        return all(self.as_dict().values())


def verify_sigmoid_axioms(sigmoid, samples: int = 1000, interval=(-100.0, 100.0),
                          seed: int = 0, delta: float | None = None,
                          atol: float = 1e-12) -> AxiomReport:
    """Check the five sigmoid axioms on a sorted random grid.

    ``sigmoid`` is a :class:`SigmoidSpec` or a plain vectorized callable.  For
    callables the tail tolerance ``delta`` must be given (default 1e-3).
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    lo, hi = interval
    if isinstance(sigmoid, SigmoidSpec):
        spec = sigmoid
        fn = lambda v: sigmoid_values(spec, v)  # noqa: E731
        if delta is None:
            delta = max(tail_delta(spec, hi), tail_delta(spec, -lo))
    else:
        fn = lambda v: np.asarray(sigmoid(np.asarray(v, dtype=np.float64)), dtype=np.float64)  # noqa: E731
        if delta is None:
            delta = 1e-3
    rng = np.random.default_rng(seed)
    grid = np.sort(np.concatenate([rng.uniform(lo, hi, samples), [lo, 0.0, hi]]))
    vals = fn(grid)
    return AxiomReport(
        non_decreasing=bool(np.all(np.diff(vals) >= 0)),
        upper_limit=bool(fn(np.array([hi]))[0] >= 1.0 - delta - atol),
        lower_limit=bool(fn(np.array([lo]))[0] <= delta + atol),
        half_at_zero=bool(abs(fn(np.array([0.0]))[0] - 0.5) <= atol),
        symmetric=bool(np.all(np.abs(vals + fn(-grid) - 1.0) <= atol)),
        delta=float(delta),
    )
