"""Seeded balanced partitions of ``range(n)``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidK
from .stats_util import RngStream

__all__ = ["FoldPlan", "make_fold_plan"]


@dataclass(frozen=True)
class FoldPlan:
    """Assignment of ``n`` samples to ``K`` folds (ids ``0..K-1``)."""

    K: int
    assignment: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.assignment.size

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)


def make_fold_plan(n: int, K: int, seed: int | RngStream) -> FoldPlan:
    """Uniformly random partition into ``K`` folds whose sizes differ by at most one."""
    if K < 2 or K > n:
        raise InvalidK(f"need 2 <= K <= n, got K={K}, n={n}")
    stream = seed if isinstance(seed, RngStream) else RngStream(int(seed))
    perm = stream.generator().permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % K
    assignment.setflags(write=False)
    return FoldPlan(K=K, assignment=assignment, seed=stream.seed)
