"""Normal distribution helpers, Benjamini-Hochberg, and seeded RNG streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError

__all__ = ["RngStream", "normal_cdf", "normal_quantile", "two_sided_p_value", "bh_fdr"]

# Version tag of the random-stream construction; bump if the derivation below changes.
RNG_SCHEME = "pcg64-seedseq/1"


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``.

    The generator is numpy's PCG64 seeded through ``SeedSequence(seed,
    spawn_key=stream_id)``. Both algorithms are fully specified by numpy and
    produce identical draws on every platform; distinct stream ids give
    statistically independent streams. ``stream_id`` may be an int or a tuple of
    ints (nested sub-streams, see :meth:`child`).
    """

    seed: int
    stream_id: int | tuple[int, ...] = 0

    def __post_init__(self):
        key = self.key
        if self.seed < 0 or any(k < 0 for k in key):
            raise DomainError("seed and stream ids must be non-negative integers")

    @property
    def key(self) -> tuple[int, ...]:
        if isinstance(self.stream_id, tuple):
            return tuple(int(k) for k in self.stream_id)
        return (int(self.stream_id),)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, self.key + (int(stream_id),))


def normal_cdf(z):
    """Standard normal CDF.

    Uses the Cephes ``ndtr`` routine shipped with scipy, which evaluates erf/erfc by
    fixed rational approximations instead of the platform libm, so results are
    stable across machines.
    """
    return special.ndtr(z)


def normal_quantile(q):
    """Inverse standard normal CDF on the open interval (0, 1)."""
    q_arr = np.asarray(q, dtype=float)
    if np.any(~((q_arr > 0.0) & (q_arr < 1.0))):
        raise DomainError(f"normal_quantile requires 0 < q < 1, got {q!r}")
    out = special.ndtri(q_arr)
    return float(out) if out.ndim == 0 else out


def two_sided_p_value(z):
    """``2 * (1 - Phi(|z|))``."""
    return 2.0 * (1.0 - special.ndtr(np.abs(z)))


def bh_fdr(p_values, q: float) -> set[int]:
    """Benjamini-Hochberg step-up procedure.

    Returns the set of rejected indices (positions in ``p_values``).
    """
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1:
        raise DomainError("p_values must be one-dimensional")
    if not 0.0 < q < 1.0:
        raise DomainError(f"q must lie in (0, 1), got {q}")
    if np.any((p < 0.0) | (p > 1.0)) or np.any(np.isnan(p)):
        raise DomainError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return set()
    order = np.argsort(p, kind="stable")
    thresholds = q * np.arange(1, m + 1) / m
    below = np.nonzero(p[order] <= thresholds)[0]
    if below.size == 0:
        return set()
    cutoff = p[order][below[-1]]
    return {int(i) for i in np.nonzero(p <= cutoff)[0]}
