"""Input data container shared by the solver, inference and nuisance code."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, InvalidInput, InvalidWeights

__all__ = ["Dataset", "WeightPair"]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WeightPair:
    """Per-sample class weights ``(W_1, W_-1)``."""

    w_plus: np.ndarray
    w_minus: np.ndarray

    def __post_init__(self):
        wp, wm = _frozen(self.w_plus), _frozen(self.w_minus)
        if wp.ndim != 1 or wp.shape != wm.shape:
            raise DimensionMismatch("w_plus and w_minus must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(wp)) and np.all(np.isfinite(wm))):
            raise InvalidWeights("weights must be finite")
        object.__setattr__(self, "w_plus", wp)
        object.__setattr__(self, "w_minus", wm)

    def __len__(self):
        return self.w_plus.size

    def subset(self, idx) -> "WeightPair":
        return WeightPair(self.w_plus[idx], self.w_minus[idx])

    def check_cap(self, cap: float) -> None:
        """Raise if any weight exceeds ``cap`` in absolute value."""
        worst = max(np.max(np.abs(self.w_plus), initial=0.0), np.max(np.abs(self.w_minus), initial=0.0))
        if worst > cap:
            raise InvalidWeights(f"weight magnitude {worst:.4g} exceeds the configured cap {cap:.4g}")


@dataclass(frozen=True)
class Dataset:
    """Covariates ``X`` (n x p), labels ``A`` in {-1, +1}, and optional extras.

    ``Y`` carries outcomes (treatment-rule setting) and ``R`` labelling
    indicators (missing-label setting). Where ``R == 0`` the label is unobserved
    and is stored as 0. Without explicit ``weights`` the plain classification
    weights ``W_1 = 1{A=1}``, ``W_-1 = 1{A=-1}`` are implied.
    """

    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray | None = None
    R: np.ndarray | None = None
    weights: WeightPair | None = None
    names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        X = _frozen(self.X)
        if X.ndim != 2:
            raise DimensionMismatch("X must be a 2-d array")
        n, p = X.shape
        if n < 2 or p < 1:
            raise InvalidInput(f"need n >= 2 and p >= 1, got X of shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("X contains missing or non-finite entries")
        A = _frozen(self.A)
        if A.shape != (n,):
            raise DimensionMismatch(f"A must have length {n}")
        R = None
        if self.R is not None:
            R = _frozen(self.R)
            if R.shape != (n,):
                raise DimensionMismatch(f"R must have length {n}")
            if not np.all((R == 0) | (R == 1)):
                raise InvalidInput("R must contain only 0/1")
            labelled = R == 1
            if not np.all(np.isin(A[labelled], (-1.0, 1.0))):
                raise InvalidInput("labels must be -1 or +1 wherever R == 1")
            A = _frozen(np.where(labelled, A, 0.0))
        elif not np.all(np.isin(A, (-1.0, 1.0))):
            raise InvalidInput("labels must be -1 or +1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "R", R)
        if self.Y is not None:
            Y = _frozen(self.Y)
            if Y.shape != (n,) or not np.all(np.isfinite(Y)):
                raise DimensionMismatch(f"Y must be a finite vector of length {n}")
            object.__setattr__(self, "Y", Y)
        if self.weights is not None:
            w = self.weights if isinstance(self.weights, WeightPair) else WeightPair(*self.weights)
            if len(w) != n:
                raise DimensionMismatch(f"weights must have length {n}")
            object.__setattr__(self, "weights", w)
        if self.names is not None:
            names = tuple(str(s) for s in self.names)
            if len(names) != p:
                raise DimensionMismatch(f"expected {p} covariate names, got {len(names)}")
            object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return self.names if self.names is not None else tuple(f"X{j + 1}" for j in range(self.p))

    def weight_pair(self) -> WeightPair:
        if self.weights is not None:
            return self.weights
        return WeightPair((self.A == 1).astype(float), (self.A == -1).astype(float))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(
            X=self.X[idx],
            A=self.A[idx],
            Y=None if self.Y is None else self.Y[idx],
            R=None if self.R is None else self.R[idx],
            weights=None if self.weights is None else self.weights.subset(idx),
            names=self.names,
        )

    def with_weights(self, weights: WeightPair | None) -> "Dataset":
        return replace(self, weights=weights)
