"""Permutation matrices: ground truth, checks, splitting, metrics.

Orientation is fixed everywhere: ``P[i, j] == 1`` means unsorted element
``i`` lands at sorted position ``j``, so ``P.T @ s`` is ascending.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import adgraph as ad

__all__ = ["PermMatrix", "GroundTruth", "gt_permutation", "is_doubly_stochastic",
           "is_hard_permutation", "split_hard_permutation", "split_hard_permutation_multi",
           "argsort", "accuracy_metrics", "apply_permutation"]


@dataclass(frozen=True)
class PermMatrix:
    entries: ad.Node
    mode: str  # "soft" or "hard"

    def __post_init__(self):
        if not isinstance(self.entries, ad.Node):
            object.__setattr__(self, "entries", ad.const(self.entries))
        v = self.entries.value
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError(f"permutation matrix must be square, got {v.shape}")
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"mode must be 'soft' or 'hard', got {self.mode!r}")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def value(self) -> np.ndarray:
        return self.entries.value


def _values(P) -> np.ndarray:
    if isinstance(P, PermMatrix):
        return P.value
    if isinstance(P, ad.Node):
        return P.value
    return np.asarray(P, dtype=np.float64)


@dataclass(frozen=True)
class GroundTruth:
    perm: PermMatrix
    keys: np.ndarray


def argsort(v) -> np.ndarray:
    """Stable ascending argsort; equal values keep their original order."""
    return np.argsort(np.asarray(v, dtype=np.float64), kind="stable")


def gt_permutation(keys) -> GroundTruth:
    keys = np.asarray(keys, dtype=np.float64)
    order = argsort(keys)
    n = keys.size
    P = np.zeros((n, n))
    P[order, np.arange(n)] = 1.0
    return GroundTruth(PermMatrix(ad.const(P), "hard"), keys.copy())


def is_doubly_stochastic(P, tol: float = 1e-9) -> bool:
    v = _values(P)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        return False
    return bool(np.all(v >= -tol)
                and np.all(np.abs(v.sum(axis=0) - 1.0) <= tol)
                and np.all(np.abs(v.sum(axis=1) - 1.0) <= tol))


def is_hard_permutation(P) -> bool:
    """Entries in {0, 1} with exactly one 1 per row and column."""
    v = _values(P)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        return False
    if not np.all((v == 0.0) | (v == 1.0)):
        return False
    return bool(np.all(v.sum(axis=0) == 1.0) and np.all(v.sum(axis=1) == 1.0))


def split_hard_permutation(P: PermMatrix, n1: int, n2: int) -> tuple[PermMatrix, PermMatrix]:
    """Relative-order permutations of the first ``n1`` and last ``n2`` elements.

    Each block is the sub-matrix of ``P`` restricted to the block's rows and to
    the columns those rows occupy, kept in ascending column order.  The result
    stays attached to the graph, so straight-through gradients of ``P`` flow
    into both blocks.
    """
    if P.mode != "hard" or not is_hard_permutation(P):
        raise ValueError("only hard permutation matrices can be split")
    if n1 < 0 or n2 < 0 or n1 + n2 != P.n:
        raise ValueError(f"split sizes {n1}+{n2} do not match n={P.n}")
    v = P.value
    n = P.n
    blocks = []
    for rows in (np.arange(0, n1), np.arange(n1, n1 + n2)):
        cols = np.sort(np.argmax(v[rows], axis=1))
        flat = rows[:, None] * n + cols[None, :]
        blocks.append(PermMatrix(ad.take(P.entries, flat), "hard"))
    return blocks[0], blocks[1]


def split_hard_permutation_multi(P: PermMatrix, sizes: Sequence[int]) -> list[PermMatrix]:
    """Fold the two-way split over ``sizes`` (leading block peeled each time)."""
    if sum(sizes) != P.n:
        raise ValueError(f"split sizes {list(sizes)} do not sum to n={P.n}")
    out = []
    rest = P
    for k, size in enumerate(sizes[:-1]):
        head, rest = split_hard_permutation(rest, size, rest.n - size)
        out.append(head)
    out.append(rest)
    return out


def apply_permutation(P, X) -> ad.Node:
    """``P.T @ X``; with a hard ``P`` every output row is exactly an input row."""
    entries = P.entries if isinstance(P, PermMatrix) else ad._as_node(P)
    X = ad._as_node(X)
    if X.value.ndim == 1:
        return ad.reshape(ad.matmul(ad.transpose(entries), ad.reshape(X, (-1, 1))), (-1,))
    if entries.shape[0] != X.shape[0]:
        raise ValueError(f"P is {entries.shape} but X has {X.shape[0]} rows")
    return ad.matmul(ad.transpose(entries), X)


def accuracy_metrics(batches: Iterable[tuple]) -> tuple[float, float]:
    """Exact-match and element-wise accuracy over ``(s, P, P_gt)`` triples.

    Compares ``argsort(P_gt.T @ s)`` with ``argsort(P.T @ s)`` position by
    position.
    """
    exact = 0
    hits = 0
    total = 0
    count = 0
    for s, P, P_gt in batches:
        s = np.asarray(s.value if isinstance(s, ad.Node) else s, dtype=np.float64)
        target = argsort(_values(P_gt).T @ s)
        pred = argsort(_values(P).T @ s)
        if target.shape != pred.shape:
            raise ValueError("inconsistent sizes in accuracy_metrics")
        match = target == pred
        exact += bool(match.all())
        hits += int(match.sum())
        total += match.size
        count += 1
    if count == 0:
        raise ValueError("accuracy_metrics needs at least one sequence")
    return exact / count, hits / total
