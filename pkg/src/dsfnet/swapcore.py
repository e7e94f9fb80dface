"""Hard, soft and error-free swap functions on pairs of values.

All graph-level functions are elementwise, so ``x`` and ``y`` may be scalar
Nodes or equal-length vectors of pairs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import adgraph as ad
from .permops import PermMatrix
from .sigmoid import SigmoidSpec, eval_sigmoid

__all__ = ["SwapMode", "SwapOutcome", "keep_coefficient", "hard_swap", "soft_swap",
           "error_free_swap", "swap", "softening_error", "iterate_swaps",
           "block_entries", "swap_perm_block", "parse_mode"]


class SwapMode(enum.Enum):
    HARD = "hard"
    SOFT = "soft"
    ERROR_FREE = "error-free"


def parse_mode(name) -> SwapMode:
    if isinstance(name, SwapMode):
        return name
    key = str(name).lower().replace("_", "-")
    if key in ("errorfree", "ef"):
        key = "error-free"
    try:
        return SwapMode(key)
    except ValueError:
        raise ValueError(f"unknown swap mode {name!r}; expected soft, error-free or hard") from None


@dataclass(frozen=True)
class SwapOutcome:
    lo: ad.Node
    hi: ad.Node
    p_keep: ad.Node  # sigma(y - x)
    p_swap: ad.Node  # sigma(x - y)


def keep_coefficient(diff) -> np.ndarray:
    """Rounded keep probability for ``diff = y - x``.

    Equal to ``round(sigma(y - x))`` with halves rounded up, decided from the
    sign of the difference so that sigmoids saturating to exactly 0.5 near
    zero cannot flip the decision.  Ties keep the original order.
    """
    return (np.asarray(diff, dtype=np.float64) >= 0).astype(np.float64)


def hard_swap(x: float, y: float) -> tuple[float, float]:
    keep = float(keep_coefficient(y - x))
    swap = 1.0 - keep
    return x * keep + y * swap, x * swap + y * keep


def soft_swap(x, y, spec: SigmoidSpec) -> SwapOutcome:
    x, y = ad._as_node(x), ad._as_node(y)
    p_keep = eval_sigmoid(spec, y - x)
    p_swap = eval_sigmoid(spec, x - y)
    lo = x * p_keep + y * p_swap
    hi = x * p_swap + y * p_keep
    return SwapOutcome(lo, hi, p_keep, p_swap)


def error_free_swap(x, y, spec: SigmoidSpec) -> SwapOutcome:
    """Exact min/max forward, soft-swap gradients backward."""
    x, y = ad._as_node(x), ad._as_node(y)
    soft = soft_swap(x, y, spec)
    keep = keep_coefficient(y.value - x.value)
    swap = 1.0 - keep
    xv, yv = x.value, y.value
    lo = ad.straight_through(xv * keep + yv * swap, soft.lo)
    hi = ad.straight_through(xv * swap + yv * keep, soft.hi)
    return SwapOutcome(lo, hi, soft.p_keep, soft.p_swap)


def _hard_outcome(x, y) -> SwapOutcome:
    xv, yv = ad._as_node(x).value, ad._as_node(y).value
    keep = keep_coefficient(yv - xv)
    swap = 1.0 - keep
    return SwapOutcome(ad.const(xv * keep + yv * swap), ad.const(xv * swap + yv * keep),
                       ad.const(keep), ad.const(swap))


def swap(x, y, spec: SigmoidSpec, mode) -> SwapOutcome:
    mode = parse_mode(mode)
    if mode is SwapMode.SOFT:
        return soft_swap(x, y, spec)
    if mode is SwapMode.ERROR_FREE:
        return error_free_swap(x, y, spec)
    return _hard_outcome(x, y)


def softening_error(x: float, y: float, spec: SigmoidSpec, mode=SwapMode.SOFT) -> float:
    """``lo' - min(x, y)`` after one swap in the given mode."""
    with ad.no_grad():
        out = swap(ad.const(x), ad.const(y), spec, mode)
    return float(out.lo.value) - min(x, y)


def iterate_swaps(x: float, y: float, spec: SigmoidSpec, k: int,
                  mode=SwapMode.SOFT) -> np.ndarray:
    """Apply the swap ``k`` times, feeding outputs back in.

    Returns a ``(k, 2)`` array of ``(lo, hi)`` after each application.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    traj = np.empty((k, 2))
    lo, hi = ad.const(x), ad.const(y)
    with ad.no_grad():
        for step in range(k):
            out = swap(lo, hi, spec, mode)
            lo, hi = out.lo, out.hi
            traj[step] = float(lo.value), float(hi.value)
    return traj


def block_entries(outcome: SwapOutcome, diff, mode) -> tuple[ad.Node, ad.Node]:
    """Diagonal (keep) and off-diagonal (swap) entries of the 2x2 block.

    ``diff`` is ``y - x`` per pair.  In error-free mode the entries are
    straight-through: rounded forward, sigmoid gradients backward.
    """
    mode = parse_mode(mode)
    if mode is SwapMode.SOFT:
        return outcome.p_keep, outcome.p_swap
    keep = keep_coefficient(diff)
    if mode is SwapMode.ERROR_FREE:
        return (ad.straight_through(keep, outcome.p_keep),
                ad.straight_through(1.0 - keep, outcome.p_swap))
    return ad.const(keep), ad.const(1.0 - keep)


def swap_perm_block(x, y, spec: SigmoidSpec, mode) -> PermMatrix:
    """The 2x2 permutation matrix over ``[x, y]``."""
    mode = parse_mode(mode)
    x, y = ad._as_node(x), ad._as_node(y)
    out = swap(x, y, spec, mode)
    keep, swp = block_entries(out, y.value - x.value, mode)
    entries = ad.scatter(ad.concat([keep, keep, swp, swp]), [0, 3, 1, 2], (2, 2))
    return PermMatrix(entries, "soft" if mode is SwapMode.SOFT else "hard")
