"""Sorting-network topology and execution.

A network is a :class:`WirePlan`: stages of disjoint comparator pairs.  Each
stage produces a permutation matrix ``P_i`` (identity except 2x2 swap blocks)
and moves values with ``s <- P_i.T @ s``.  The composed matrix is
``P = P_1 @ P_2 @ ... @ P_k`` so that ``P.T @ s`` equals the network output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import adgraph as ad
from .permops import PermMatrix
from .sigmoid import SigmoidSpec
from .swapcore import SwapMode, block_entries, keep_coefficient, parse_mode, swap

__all__ = ["WirePlan", "build_odd_even", "stage_permutation", "execute"]


@dataclass(frozen=True)
class WirePlan:
    n: int
    stages: tuple[tuple[tuple[int, int], ...], ...] = field(default_factory=tuple)

    def __post_init__(self):
        for stage in self.stages:
            _validate_stage(stage, self.n)

    @property
    def k(self) -> int:
        return len(self.stages)


def _validate_stage(stage, n: int):
    seen = set()
    for i, j in stage:
        if not (0 <= i < j < n):
            raise ValueError(f"bad comparator ({i}, {j}) for n={n}")
        if i in seen or j in seen:
            raise ValueError(f"overlapping comparators in stage {stage}")
        seen.update((i, j))


@lru_cache(maxsize=None)
def build_odd_even(n: int) -> WirePlan:
    """Odd-even transposition network: ``n`` rounds alternating even/odd pairs.

    Rounds without any comparator (only possible for ``n <= 2``) are dropped.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    stages = []
    for r in range(n):
        stage = tuple((i, i + 1) for i in range(r % 2, n - 1, 2))
        if stage:
            stages.append(stage)
    return WirePlan(n, tuple(stages))


@lru_cache(maxsize=None)
def _stage_layout(stage: tuple, n: int):
    i_idx = np.array([p[0] for p in stage], dtype=np.intp)
    j_idx = np.array([p[1] for p in stage], dtype=np.intp)
    untouched = np.ones(n)
    untouched[i_idx] = 0.0
    untouched[j_idx] = 0.0
    values_at = np.concatenate([i_idx, j_idx])
    block_at = np.concatenate([i_idx * n + i_idx, j_idx * n + j_idx,
                               i_idx * n + j_idx, j_idx * n + i_idx])
    for arr in (i_idx, j_idx, untouched, values_at, block_at):
        arr.flags.writeable = False
    return i_idx, j_idx, untouched, values_at, block_at


def stage_permutation(stage, s, spec: SigmoidSpec, mode) -> tuple[ad.Node, PermMatrix]:
    """Run one stage of comparators on the vector ``s``.

    Returns the new values and the stage matrix ``P_i``; forward values satisfy
    ``s' == P_i.T @ s``.
    """
    mode = parse_mode(mode)
    s = ad._as_node(s)
    n = s.shape[0]
    stage = tuple(tuple(p) for p in stage)
    kind = "soft" if mode is SwapMode.SOFT else "hard"
    if not stage:
        return s, PermMatrix(ad.const(np.eye(n)), kind)
    _validate_stage(stage, n)
    i_idx, j_idx, untouched, values_at, block_at = _stage_layout(stage, n)

    if mode is SwapMode.HARD:
        sv = s.value
        keep = keep_coefficient(sv[j_idx] - sv[i_idx])
        swp = 1.0 - keep
        out = sv.copy()
        out[i_idx] = sv[i_idx] * keep + sv[j_idx] * swp
        out[j_idx] = sv[i_idx] * swp + sv[j_idx] * keep
        P = np.diag(untouched)
        P.flat[block_at] = np.concatenate([keep, keep, swp, swp])
        return ad.const(out), PermMatrix(ad.const(P), "hard")

    x = ad.take(s, i_idx)
    y = ad.take(s, j_idx)
    res = swap(x, y, spec, mode)
    moved = ad.scatter(ad.concat([res.lo, res.hi]), values_at, (n,))
    s_new = s * untouched + moved

    keep, swp = block_entries(res, y.value - x.value, mode)
    block = ad.scatter(ad.concat([keep, keep, swp, swp]), block_at, (n, n))
    P = block + np.diag(untouched)
    return s_new, PermMatrix(P, kind)


def execute(plan: WirePlan, s, spec: SigmoidSpec, mode) -> tuple[ad.Node, PermMatrix]:
    """Run every stage; return the network output and composed permutation."""
    mode = parse_mode(mode)
    s = ad._as_node(s)
    if s.value.ndim != 1 or s.shape[0] != plan.n:
        raise ValueError(f"expected a vector of length {plan.n}, got shape {s.shape}")
    kind = "soft" if mode is SwapMode.SOFT else "hard"
    P = None
    for stage in plan.stages:
        s, Pi = stage_permutation(stage, s, spec, mode)
        P = Pi.entries if P is None else ad.matmul(P, Pi.entries)
    if P is None:
        P = ad.const(np.eye(plan.n))
    return s, PermMatrix(P, kind)
