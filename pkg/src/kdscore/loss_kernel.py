"""Piecewise-linear convex surrogate losses and the kernels that smooth them.

A piecewise-linear loss is stored through its slope representation

    phi'(t) = base_slope + sum_j jumps[j] * 1{t >= knots[j]}

plus one anchor point fixing the additive constant. The *local* kernel ``H``
(a smooth step, flat outside [-1, 1]) replaces each indicator to give a
smoothed gradient; the *global* kernel ``G`` (an everywhere-positive density)
replaces the Dirac masses of phi'' to give a usable Hessian weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInput

__all__ = [
    "PiecewiseLinearLoss",
    "LocalKernel",
    "GlobalKernel",
    "BandwidthConfig",
    "QUINTIC",
    "GAUSSIAN",
    "hinge",
    "quintic_local_kernel",
    "loss_value",
    "smoothed_gradient",
    "smoothed_loss_value",
    "hessian_weight",
    "auto_bandwidths",
]


def _as_tuple(values) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class PiecewiseLinearLoss:
    """Convex piecewise-linear loss phi.

    Parameters
    ----------
    knots : sequence of float
        Strictly increasing kink locations ``t_1 < ... < t_J``.
    base_slope : float
        Slope of phi left of the first knot.
    jumps : sequence of float
        Positive slope increments at each knot.
    anchor : (float, float), optional
        A point ``(t0, phi(t0))``. Defaults to ``(t_J, 0.0)``.
    """

    knots: tuple[float, ...]
    base_slope: float
    jumps: tuple[float, ...]
    anchor: tuple[float, float] | None = None

    def __post_init__(self):
        knots = _as_tuple(self.knots)
        jumps = _as_tuple(self.jumps)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "base_slope", float(self.base_slope))
        if len(knots) < 1:
            raise InvalidInput("a piecewise-linear loss needs at least one knot")
        if len(jumps) != len(knots):
            raise InvalidInput("knots and jumps must have the same length")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise InvalidInput("knots must be strictly increasing")
        if any(not d > 0 for d in jumps):
            raise InvalidInput("every jump must be strictly positive")
        if not all(math.isfinite(v) for v in knots + jumps + (self.base_slope,)):
            raise InvalidInput("loss parameters must be finite")
        anchor = self.anchor if self.anchor is not None else (knots[-1], 0.0)
        object.__setattr__(self, "anchor", (float(anchor[0]), float(anchor[1])))

    @property
    def knot_array(self) -> np.ndarray:
        return np.asarray(self.knots)

    @property
    def jump_array(self) -> np.ndarray:
        return np.asarray(self.jumps)

    @property
    def scale(self) -> float:
        """Knot range, or 1 for single-knot losses; sets solver bandwidths."""
        span = self.knots[-1] - self.knots[0]
        return span if span > 0 else 1.0

    def to_record(self) -> dict:
        return {
            "knots": list(self.knots),
            "base_slope": self.base_slope,
            "jumps": list(self.jumps),
            "anchor": list(self.anchor),
        }

    @classmethod
    def from_record(cls, record: dict) -> "PiecewiseLinearLoss":
        unknown = set(record) - {"knots", "base_slope", "jumps", "anchor"}
        if unknown:
            raise InvalidInput(f"unknown loss keys: {sorted(unknown)}")
        anchor = record.get("anchor")
        return cls(
            knots=record["knots"],
            base_slope=record["base_slope"],
            jumps=record["jumps"],
            anchor=tuple(anchor) if anchor is not None else None,
        )

    # convenience wrappers
    def value(self, t):
        return loss_value(self, t)

    def slope(self, t):
        """Right-continuous exact slope phi'(t)."""
        t = np.asarray(t, dtype=float)
        out = np.full(t.shape, self.base_slope)
        for tj, dj in zip(self.knots, self.jumps):
            out = out + dj * (t >= tj)
        return out if out.ndim else float(out)


def hinge() -> PiecewiseLinearLoss:
    """``max(0, 1 - t)``."""
    return PiecewiseLinearLoss(knots=(1.0,), base_slope=-1.0, jumps=(1.0,), anchor=(1.0, 0.0))


def quintic_local_kernel(t):
    """Smooth step: 0 below -1, 1 above 1, ``1/2 + 15/16 (t - 2t^3/3 + t^5/5)`` between."""
    t = np.asarray(t, dtype=float)
    u2 = t * t
    poly = 0.5 + t * (15.0 / 16.0 + u2 * (-5.0 / 8.0 + u2 * (3.0 / 16.0)))
    out = np.where(t <= -1.0, 0.0, np.where(t >= 1.0, 1.0, poly))
    return out if out.ndim else float(out)


def _quintic_derivative(t):
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    out = np.where(inside, (15.0 / 16.0) * (1.0 - t * t) ** 2, 0.0)
    return out if out.ndim else float(out)


def _quintic_excess(t):
    # int_{-inf}^t (H(s) - 1{s >= 0}) ds; vanishes outside (-1, 1), peaks at 5/32.
    t = np.asarray(t, dtype=float)
    c = np.clip(t, -1.0, 1.0)
    c2 = c * c
    prim = 0.5 * (c + 1.0) + (15.0 / 16.0) * (c2 * (0.5 + c2 * (-1.0 / 6.0 + c2 / 30.0)) - 11.0 / 30.0)
    out = np.where(np.abs(t) < 1.0, prim - np.maximum(c, 0.0), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class LocalKernel:
    """Smooth step ``H`` with ``H' >= 0`` supported on [-1, 1].

    ``excess`` is the antiderivative of ``H(s) - 1{s >= 0}``; it lets the solver
    evaluate the smoothed loss itself and not just its gradient.
    """

    name: str
    H: Callable = field(repr=False)
    dH: Callable = field(repr=False)
    excess: Callable = field(repr=False)


@dataclass(frozen=True)
class GlobalKernel:
    """Everywhere-positive, mean-zero probability density ``G``."""

    name: str
    G: Callable = field(repr=False)


def _gaussian_density(t):
    t = np.asarray(t, dtype=float)
    out = np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    return out if out.ndim else float(out)


QUINTIC = LocalKernel("quintic", quintic_local_kernel, _quintic_derivative, _quintic_excess)
GAUSSIAN = GlobalKernel("gaussian", _gaussian_density)


def loss_value(loss: PiecewiseLinearLoss, t):
    """phi(t), integrated from the anchor through the slope representation."""
    t = np.asarray(t, dtype=float)
    t0, v0 = loss.anchor
    out = v0 + loss.base_slope * (t - t0)
    for tj, dj in zip(loss.knots, loss.jumps):
        out = out + dj * (np.maximum(t - tj, 0.0) - max(t0 - tj, 0.0))
    return out if out.ndim else float(out)


def smoothed_gradient(loss: PiecewiseLinearLoss, kernel: LocalKernel, h_lo: float, t):
    """``base_slope + sum_j jumps[j] * H((t - knots[j]) / h_lo)``."""
    if not h_lo > 0:
        raise InvalidInput(f"h_lo must be positive, got {h_lo}")
    t = np.asarray(t, dtype=float)
    out = np.full(t.shape, loss.base_slope)
    for tj, dj in zip(loss.knots, loss.jumps):
        out = out + dj * kernel.H((t - tj) / h_lo)
    return out if out.ndim else float(out)


def smoothed_loss_value(loss: PiecewiseLinearLoss, kernel: LocalKernel, h: float, t):
    """Antiderivative of :func:`smoothed_gradient`, equal to phi away from the knots."""
    t = np.asarray(t, dtype=float)
    out = loss_value(loss, t)
    for tj, dj in zip(loss.knots, loss.jumps):
        out = out + dj * h * kernel.excess((t - tj) / h)
    return out if np.ndim(out) else float(out)


def hessian_weight(loss: PiecewiseLinearLoss, kernel: GlobalKernel, h_gb: float, t):
    """``sum_j jumps[j] * G((knots[j] - t) / h_gb) / h_gb``."""
    if not h_gb > 0:
        raise InvalidInput(f"h_gb must be positive, got {h_gb}")
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape)
    for tj, dj in zip(loss.knots, loss.jumps):
        out = out + dj * kernel.G((tj - t) / h_gb) / h_gb
    return out if out.ndim else float(out)


def auto_bandwidths(n: int, p: int) -> tuple[float, float]:
    """Default ``(h_lo, h_gb) = (1/sqrt(n log n), (log p / n)^(1/5))``.

    ``log p`` is floored at ``log 2`` so a single covariate still gets a positive
    global bandwidth.
    """
    if n < 2:
        raise InvalidInput("bandwidth rule needs n >= 2")
    h_lo = 1.0 / math.sqrt(n * math.log(n))
    h_gb = (math.log(max(p, 2)) / n) ** 0.2
    return h_lo, h_gb


@dataclass(frozen=True)
class BandwidthConfig:
    """Local and global bandwidths; ``None`` entries fall back to :func:`auto_bandwidths`."""

    h_lo: float | None = None
    h_gb: float | None = None

    def __post_init__(self):
        for name in ("h_lo", "h_gb"):
            v = getattr(self, name)
            if v is not None and not (v > 0 and math.isfinite(v)):
                raise InvalidInput(f"{name} must be a positive finite number, got {v}")

    @property
    def auto(self) -> bool:
        return self.h_lo is None and self.h_gb is None

    def resolve(self, n: int, p: int) -> tuple[float, float]:
        lo, gb = auto_bandwidths(n, p)
        return (self.h_lo if self.h_lo is not None else lo, self.h_gb if self.h_gb is not None else gb)
