"""Convex programs used by the inference procedure.

1. L1-penalised (weighted) surrogate-loss ERM

       (1/n) sum_i [W1_i phi(x_i'b) + W-1_i phi(-x_i'b)] + lam ||b||_1

   solved by accelerated proximal gradient on the loss smoothed with the local
   kernel, with bandwidth continuation down to ``1e-4 * knot scale``.

2. The kernel-weighted lasso for the decorrelation vector

       sum_i v_i (x_il - x_i,-l' w)^2 + mu ||w||_1

   solved by Gram-form coordinate descent.

Both come with cross-validation over a log-spaced grid.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _cd
from .dataset import Dataset, WeightPair
from .errors import (
    AllZeroWeights,
    DegenerateFolds,
    DimensionMismatch,
    InvalidInput,
    NonConvergenceWarning,
    UnboundedRisk,
)
from .folds import make_fold_plan
from .loss_kernel import (
    GAUSSIAN,
    QUINTIC,
    GlobalKernel,
    LocalKernel,
    PiecewiseLinearLoss,
    hessian_weight,
    loss_value,
    smoothed_gradient,
    smoothed_loss_value,
)
from .stats_util import RngStream

__all__ = [
    "SolverOptions",
    "ErmFit",
    "DecorrelationFit",
    "DecorrelationProblem",
    "empirical_risk",
    "penalized_objective",
    "kkt_residual",
    "lambda_grid",
    "log_grid",
    "fit_penalized_erm",
    "fit_lambda_path",
    "cross_validate_lambda",
    "fit_erm_cv",
    "hessian_weights",
    "fit_decorrelation",
    "cross_validate_mu",
]


@dataclass(frozen=True)
class SolverOptions:
    """Tolerances and bandwidth schedule for :func:`fit_penalized_erm`.

    ``h_start`` and ``h_solve`` are multiples of the loss' knot scale; the
    bandwidth shrinks geometrically by ``h_ratio`` between them. ``max_iter``
    caps the total proximal-gradient iterations of one fit.
    """

    opt_tol: float = 1e-8
    kkt_tol: float = 1e-4
    max_iter: int = 10_000
    h_start: float = 0.1
    h_solve: float = 1e-4
    h_ratio: float = 0.1
    path_max_iter: int = 2_000
    kernel: LocalKernel = field(default=QUINTIC, compare=False)

    def stages(self, loss: PiecewiseLinearLoss) -> list[float]:
        scale = loss.scale
        hs = [self.h_start * scale]
        while hs[-1] > self.h_solve * scale * (1 + 1e-12):
            hs.append(max(hs[-1] * self.h_ratio, self.h_solve * scale))
        return hs


@dataclass(frozen=True)
class ErmFit:
    beta: np.ndarray
    lam: float
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    h_final: float
    history: tuple[float, ...] = field(default=(), repr=False)
    stage_starts: tuple[int, ...] = field(default=(), repr=False)

    @property
    def nonzero(self) -> int:
        return int(np.count_nonzero(self.beta))


@dataclass(frozen=True)
class DecorrelationFit:
    w: np.ndarray
    mu: float
    l: int
    iterations: int = 0
    converged: bool = True
    kkt_residual: float = 0.0

    def full_direction(self, p: int) -> np.ndarray:
        """Length-p vector ``theta`` with ``theta[l] = 1``, ``theta[-l] = -w``."""
        theta = np.empty(p)
        theta[self.l] = 1.0
        theta[np.arange(p) != self.l] = -self.w
        return theta


# ---------------------------------------------------------------------------
# ERM
# ---------------------------------------------------------------------------


class _Terms:
    """The weighted loss as a flat list of terms ``coef * phi(sign * x_idx'b)``."""

    def __init__(self, data: Dataset):
        if data.weights is None:
            self.idx = None
            self.sign = data.A.copy()
            self.coef = np.ones(data.n)
            if np.any(self.sign == 0):
                raise InvalidInput("unlabelled rows need explicit weights")
        else:
            w: WeightPair = data.weights
            idx = np.concatenate([np.arange(data.n), np.arange(data.n)])
            sign = np.concatenate([np.ones(data.n), -np.ones(data.n)])
            coef = np.concatenate([w.w_plus, w.w_minus])
            keep = coef != 0.0
            self.idx, self.sign, self.coef = idx[keep], sign[keep], coef[keep]
        self.n = data.n
        self.p = data.p

    def margins(self, z: np.ndarray) -> np.ndarray:
        return self.sign * (z if self.idx is None else z[self.idx])

    def backproject(self, per_term: np.ndarray) -> np.ndarray:
        if self.idx is None:
            return per_term
        return np.bincount(self.idx, weights=per_term, minlength=self.n)


class _SmoothedRisk:
    def __init__(self, data: Dataset, loss: PiecewiseLinearLoss, kernel: LocalKernel):
        self.X = data.X
        self.terms = _Terms(data)
        self.loss = loss
        self.kernel = kernel
        self.n = data.n
        self._fast = kernel == QUINTIC
        self._params = (loss.knot_array, loss.jump_array, loss.base_slope, *loss.anchor)
        self._none = np.empty(0)

    def _terms(self, m, h, want_slope):
        coef = self.terms.coef
        if self._fast:
            slope = np.empty(m.size) if want_slope else self._none
            val = _cd.quintic_smoothed_terms(m, coef, *self._params, h, slope)
            return val, slope
        val = float(coef @ smoothed_loss_value(self.loss, self.kernel, h, m))
        slope = coef * smoothed_gradient(self.loss, self.kernel, h, m) if want_slope else None
        return val, slope

    def value(self, beta, h):
        m = self.terms.margins(self.X @ beta)
        return self._terms(m, h, False)[0] / self.n

    def value_grad(self, beta, h):
        m = self.terms.margins(self.X @ beta)
        val, slope = self._terms(m, h, True)
        return val / self.n, self._project(slope)

    def grad(self, beta, h):
        m = self.terms.margins(self.X @ beta)
        return self._project(self._terms(m, h, True)[1])

    def _project(self, slope):
        return self.X.T @ self.terms.backproject(self.terms.sign * slope) / self.n

    def exact(self, beta):
        m = self.terms.margins(self.X @ beta)
        return float(self.terms.coef @ loss_value(self.loss, m)) / self.n


def empirical_risk(data: Dataset, loss: PiecewiseLinearLoss, beta) -> float:
    """Weighted empirical surrogate risk (no penalty)."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.p,):
        raise DimensionMismatch(f"beta must have length {data.p}")
    return _SmoothedRisk(data, loss, QUINTIC).exact(beta)


def penalized_objective(data: Dataset, loss: PiecewiseLinearLoss, beta, lam: float) -> float:
    return empirical_risk(data, loss, beta) + lam * float(np.abs(beta).sum())


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def kkt_residual(grad: np.ndarray, beta: np.ndarray, lam: float) -> float:
    """Worst violation of the lasso optimality conditions for gradient ``grad``."""
    active = beta != 0
    r_active = np.abs(grad[active] + lam * np.sign(beta[active]))
    r_zero = np.maximum(np.abs(grad[~active]) - lam, 0.0)
    return float(max(r_active.max(initial=0.0), r_zero.max(initial=0.0)))


def _prox_gradient(risk: _SmoothedRisk, lam, beta0, h, step, max_iter, opt_tol, kkt_tol, history):
    """Monotone FISTA with backtracking and objective-based restarts.

    Returns ``(beta, step, iterations, kkt)``.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        # divergent runs (negative weights, unbounded risk) stop on a non-finite value
        return _prox_gradient_loop(risk, lam, beta0, h, step, max_iter, opt_tol, kkt_tol, history)


def _prox_gradient_loop(risk, lam, beta0, h, step, max_iter, opt_tol, kkt_tol, history):
    x = beta0.copy()
    fx, gx = risk.value_grad(x, h)
    Fx = fx + lam * np.abs(x).sum()
    history.append(Fx)
    y, fy, gy = x, fx, gx
    t = 1.0
    it = 0
    while it < max_iter:
        it += 1
        step *= 1.25
        while True:
            x_new = _soft(y - step * gy, step * lam)
            d = x_new - y
            f_new = risk.value(x_new, h)
            if not math.isfinite(f_new):
                break
            if f_new <= fy + gy @ d + (d @ d) / (2.0 * step) + 1e-15 * abs(fy) or step < 1e-300:
                break
            step *= 0.5
        F_new = f_new + lam * np.abs(x_new).sum()
        if not math.isfinite(F_new):
            break
        if F_new > Fx:
            if y is x:
                # a plain prox step from x failed to descend: numerically stuck
                break
            if gx is None:
                gx = risk.grad(x, h)
            y, fy, gy, t = x, fx, gx, 1.0
            continue
        rel = (Fx - F_new) / max(1.0, abs(Fx))
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y_next = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, fx, Fx, t, gx = x_new, f_new, F_new, t_new, None
        history.append(Fx)
        if rel <= opt_tol:
            gx = risk.grad(x, h)
            if rel == 0.0 or kkt_residual(gx, x, lam) <= 0.5 * kkt_tol:
                break
        y = y_next
        fy, gy = risk.value_grad(y, h)
    if gx is None:
        gx = risk.grad(x, h)
    return x, step, it, kkt_residual(gx, x, lam)


def _initial_step(risk: _SmoothedRisk, h: float) -> float:
    # inverse of a cheap curvature bound; backtracking refines it
    col = np.einsum("ij,ij->j", risk.X, risk.X)
    total_w = np.abs(risk.terms.coef).sum() / risk.n
    bound = max(col.max() * total_w / max(h, 1e-12), 1e-12)
    return 1.0 / bound


def fit_penalized_erm(
    data: Dataset,
    loss: PiecewiseLinearLoss,
    lam: float,
    options: SolverOptions | None = None,
    beta0=None,
) -> ErmFit:
    """Minimise the L1-penalised weighted surrogate risk at a fixed ``lam``.

    If the iteration cap is hit before the KKT test passes the fit is still
    returned, with ``converged=False``, and a :class:`NonConvergenceWarning` is
    issued.
    """
    options = options or SolverOptions()
    if not lam > 0:
        raise InvalidInput(f"lambda must be positive, got {lam}")
    risk = _SmoothedRisk(data, loss, options.kernel)
    beta = np.zeros(data.p) if beta0 is None else np.array(beta0, dtype=float)
    stages = options.stages(loss)
    step = _initial_step(risk, stages[0])
    history: list[float] = []
    starts = []
    used = 0
    kkt = math.inf
    for s, h in enumerate(stages):
        if s > 0:
            step *= h / stages[s - 1]
        starts.append(len(history))
        remaining = options.max_iter - used
        if remaining <= 0:
            break
        beta, step, it, kkt = _prox_gradient(
            risk, lam, beta, h, step, remaining, options.opt_tol, options.kkt_tol, history
        )
        used += it
    h_final = stages[-1]
    if not np.all(np.isfinite(beta)):
        raise UnboundedRisk(f"iterates diverged at lambda={lam:g}; the weighted risk is unbounded below")
    kkt = kkt_residual(risk.grad(beta, h_final), beta, lam)
    converged = bool(kkt <= options.kkt_tol)
    if not converged:
        warnings.warn(
            f"ERM solver stopped after {used} iterations with KKT residual {kkt:.3g}",
            NonConvergenceWarning,
            stacklevel=2,
        )
    return ErmFit(
        beta=beta,
        lam=float(lam),
        objective=risk.exact(beta) + lam * float(np.abs(beta).sum()),
        iterations=used,
        converged=converged,
        kkt_residual=kkt,
        h_final=h_final,
        history=tuple(history),
        stage_starts=tuple(starts),
    )


def log_grid(top: float, n_values: int = 50, ratio: float = 0.01) -> np.ndarray:
    """``n_values`` log-spaced values from ``top`` down to ``ratio * top``."""
    if not top > 0:
        top = 1e-12
    if n_values == 1:
        return np.array([top])
    return np.geomspace(top, ratio * top, n_values)


def _annihilating_lambda(data: Dataset, loss: PiecewiseLinearLoss, options: SolverOptions) -> float:
    # CV paths run at the coarsest bandwidth, the final fit at the finest
    risk = _SmoothedRisk(data, loss, options.kernel)
    zero = np.zeros(data.p)
    return max(float(np.abs(risk.grad(zero, h)).max()) for h in (options.stages(loss)[0], options.stages(loss)[-1]))


def lambda_grid(data: Dataset, loss: PiecewiseLinearLoss, n_lambda: int = 50, ratio: float = 0.01,
                options: SolverOptions | None = None, cv_folds: int | None = None,
                seed: int | RngStream = 0) -> np.ndarray:
    """Log-spaced grid starting at the smallest penalty that keeps ``beta = 0``.

    With ``cv_folds`` the top value also annihilates the fit on every CV
    training split (same split as :func:`cross_validate_lambda` with ``seed``),
    so the first grid entry is a bounded zero fit even when negative weights
    make the smaller penalties diverge.
    """
    options = options or SolverOptions()
    top = _annihilating_lambda(data, loss, options)
    if cv_folds is not None and data.n >= cv_folds >= 2:
        plan = make_fold_plan(data.n, cv_folds, seed)
        for k in range(cv_folds):
            top = max(top, _annihilating_lambda(data.subset(plan.complement(k)), loss, options))
    return log_grid(top, n_lambda, ratio)


def fit_lambda_path(data: Dataset, loss: PiecewiseLinearLoss, grid, options: SolverOptions | None = None
                    ) -> np.ndarray:
    """Warm-started fits along ``grid`` at the coarsest smoothing bandwidth only.

    Used for cross-validation, where only the held-out ranking matters. With
    negative weights the risk can be unbounded below for small penalties; a
    fit that fails to converge is then taken as divergent, and its row and
    every row after it (smaller penalties diverge too) are set to NaN.
    """
    options = options or SolverOptions()
    risk = _SmoothedRisk(data, loss, options.kernel)
    h = options.stages(loss)[0]
    step = _initial_step(risk, h)
    beta = np.zeros(data.p)
    out = np.full((len(grid), data.p), np.nan)
    may_diverge = bool(np.any(risk.terms.coef < 0))
    for i, lam in enumerate(grid):
        beta, step, _, kkt = _prox_gradient(
            risk, float(lam), beta, h, step, options.path_max_iter, options.opt_tol * 100,
            options.kkt_tol * 10, []
        )
        if not np.all(np.isfinite(beta)) or (may_diverge and kkt > options.kkt_tol * 10):
            break
        out[i] = beta
    return out


def cross_validate_lambda(
    data: Dataset,
    loss: PiecewiseLinearLoss,
    grid: Sequence[float],
    folds: int = 5,
    seed: int | RngStream = 0,
    options: SolverOptions | None = None,
    return_curve: bool = False,
):
    """Grid value with the smallest mean held-out (weighted) surrogate risk.

    Ties go to the earliest grid entry. Penalties whose path fit diverged on
    any fold (see :func:`fit_lambda_path`) score ``+inf``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise InvalidInput("lambda grid is empty")
    if np.any(grid <= 0):
        raise InvalidInput("lambda grid must be positive")
    if folds < 2:
        raise InvalidInput("need at least 2 CV folds")
    if data.n < folds:
        raise DegenerateFolds(f"cannot split {data.n} samples into {folds} non-empty folds")
    if grid.size == 1 and not return_curve:
        return float(grid[0])
    plan = make_fold_plan(data.n, folds, seed)
    curve = np.zeros(grid.size)
    for k in range(folds):
        train, test = data.subset(plan.complement(k)), data.subset(plan.members(k))
        path = fit_lambda_path(train, loss, grid, options)
        for i in range(grid.size):
            r = empirical_risk(test, loss, path[i]) if np.all(np.isfinite(path[i])) else math.inf
            curve[i] += r if math.isfinite(r) else math.inf
    curve /= folds
    if not np.any(np.isfinite(curve)):
        raise UnboundedRisk("the weighted risk diverged at every penalty in the grid")
    best = float(grid[int(np.argmin(curve))])
    return (best, curve) if return_curve else best


def fit_erm_cv(
    data: Dataset,
    loss: PiecewiseLinearLoss,
    grid=None,
    folds: int = 5,
    seed: int | RngStream = 0,
    n_lambda: int = 50,
    lambda_ratio: float = 0.01,
    options: SolverOptions | None = None,
) -> ErmFit:
    """Cross-validate the penalty then refit on all of ``data``."""
    if grid is None:
        grid = lambda_grid(data, loss, n_lambda, lambda_ratio, options, cv_folds=folds, seed=seed)
    lam = cross_validate_lambda(data, loss, grid, folds, seed, options)
    return fit_penalized_erm(data, loss, lam, options)


# ---------------------------------------------------------------------------
# Decorrelation
# ---------------------------------------------------------------------------

WEIGHT_MODES = ("floored", "unweighted")


def hessian_weights(data: Dataset, beta, loss: PiecewiseLinearLoss, h_gb: float,
                    kernel: GlobalKernel = GAUSSIAN, mode: str = "floored") -> np.ndarray:
    """Per-sample kernel Hessian weights at ``beta``.

    ``floored``: ``sum_a max(W_a, 0) * hw(a x'beta)``; for implied weights this is
    ``hw(A x'beta)``. ``unweighted``: ``hw(A x'beta)`` whatever the weights.
    ``raw`` (no flooring) is used by the information estimate.
    """
    z = data.X @ np.asarray(beta, dtype=float)
    if mode == "unweighted" or data.weights is None:
        a = np.where(data.A == 0, 1.0, data.A)
        return hessian_weight(loss, kernel, h_gb, a * z)
    w = data.weights
    if mode == "floored":
        wp, wm = np.maximum(w.w_plus, 0.0), np.maximum(w.w_minus, 0.0)
    elif mode == "raw":
        wp, wm = w.w_plus, w.w_minus
    else:
        raise InvalidInput(f"unknown weight mode {mode!r}")
    return wp * hessian_weight(loss, kernel, h_gb, z) + wm * hessian_weight(loss, kernel, h_gb, -z)


class DecorrelationProblem:
    """Pooled kernel-weighted Gram matrices for every coordinate at once.

    The sample weights ``omega_i / (K n_k)`` do not depend on the target
    coordinate, so one Gram matrix (plus one per CV fold) serves all targets.

    Parameters
    ----------
    folds : list of Dataset
        Evaluation folds ``I_k``.
    betas : list of arrays
        ``betas[k]`` fitted on the complement of fold ``k``.
    row_ids : list of int arrays, optional
        Original sample index of every row of every fold. The pooled rows are
        sorted by it, so the CV split does not depend on how folds are labelled.
    """

    def __init__(self, folds: Sequence[Dataset], betas: Sequence[np.ndarray], loss: PiecewiseLinearLoss,
                 h_gb: float, kernel: GlobalKernel = GAUSSIAN, weight_mode: str = "floored",
                 cv_folds: int = 5, seed: int | RngStream = 0, row_ids=None):
        if len(folds) != len(betas) or len(folds) == 0:
            raise DimensionMismatch("need one beta per fold")
        p = folds[0].p
        K = len(folds)
        xs, vs = [], []
        for data, beta in zip(folds, betas):
            if data.p != p or np.shape(beta) != (p,):
                raise DimensionMismatch("fold dimensions disagree")
            omega = hessian_weights(data, beta, loss, h_gb, kernel, weight_mode)
            xs.append(data.X)
            vs.append(omega / (K * data.n))
        self.X = np.vstack(xs)
        self.v = np.concatenate(vs)
        if row_ids is not None:
            order = np.argsort(np.concatenate(row_ids), kind="stable")
            if order.size != self.v.size:
                raise DimensionMismatch("row_ids do not match the fold sizes")
            self.X, self.v = self.X[order], self.v[order]
        if not np.any(self.v > 0):
            raise AllZeroWeights("every Hessian weight is zero")
        self.p = p
        self.gram = self._gram(np.ones(self.v.size, dtype=bool))
        self.cv_folds = cv_folds
        self.seed = seed
        self._cv = None

    def _gram(self, mask) -> np.ndarray:
        Xm = self.X[mask]
        return np.ascontiguousarray(Xm.T @ (self.v[mask, None] * Xm))

    def _cv_grams(self):
        if self._cv is None:
            N = self.v.size
            if N < self.cv_folds:
                raise DegenerateFolds(f"cannot split {N} samples into {self.cv_folds} folds")
            plan = make_fold_plan(N, self.cv_folds, self.seed)
            total = self.v.sum()
            grams = []
            for k in range(self.cv_folds):
                test = plan.assignment == k
                g_test = self._gram(test)
                v_test = self.v[test].sum()
                v_train = total - v_test
                if v_train <= 0:
                    raise DegenerateFolds("a CV training split has no positive weight")
                g_train = (self.gram - g_test) * (total / v_train)
                grams.append((np.ascontiguousarray(g_train), g_test, v_test))
            self._cv = grams
        return self._cv

    def mu_max(self, l: int) -> float:
        col = np.abs(self.gram[:, l]).copy()
        col[l] = 0.0
        return 2.0 * float(col.max(initial=0.0))

    def mu_grid(self, l: int, n_mu: int = 50, ratio: float = 0.01) -> np.ndarray:
        return log_grid(self.mu_max(l), n_mu, ratio)

    def objective(self, l: int, w, mu: float) -> float:
        b = self._embed(l, w)
        return float(_cd.quad_form_sparse(self.gram, l, b)) + mu * float(np.abs(w).sum())

    def _embed(self, l, w):
        b = np.zeros(self.p)
        b[np.arange(self.p) != l] = w
        return b

    def _path(self, gram, l, mus, tol, max_sweeps):
        return _cd.cd_path(gram, int(l), np.asarray(mus, dtype=float), np.zeros(self.p), tol, max_sweeps)

    def fit(self, l: int, mu: float, tol: float = 1e-10, max_sweeps: int = 10_000, warm_grid=None
            ) -> DecorrelationFit:
        if not 0 <= l < self.p:
            raise DimensionMismatch(f"coordinate {l} out of range for p={self.p}")
        if not mu > 0:
            raise InvalidInput(f"mu must be positive, got {mu}")
        mus = [mu] if warm_grid is None else [m for m in warm_grid if m > mu] + [mu]
        B, sweeps, conv = self._path(self.gram, l, mus, tol, max_sweeps)
        b = B[-1]
        grad = 2.0 * (self.gram @ b - self.gram[:, l])
        keep = np.arange(self.p) != l
        kkt = kkt_residual(grad[keep], b[keep], mu)
        if not conv[-1]:
            warnings.warn(f"decorrelation CD hit {max_sweeps} sweeps", NonConvergenceWarning, stacklevel=2)
        return DecorrelationFit(w=b[keep].copy(), mu=float(mu), l=int(l), iterations=int(sweeps.sum()),
                                converged=bool(conv[-1]), kkt_residual=kkt)

    def cv_curve(self, l: int, grid, tol: float = 1e-8, max_sweeps: int = 10_000) -> np.ndarray:
        grid = np.asarray(grid, dtype=float)
        curve = np.zeros(grid.size)
        for g_train, g_test, v_test in self._cv_grams():
            B, _, _ = self._path(g_train, l, grid, tol, max_sweeps)
            for i in range(grid.size):
                curve[i] += _cd.quad_form_sparse(g_test, l, B[i]) / max(v_test, 1e-300)
        return curve / len(self._cv)

    def cross_validate(self, l: int, grid=None, n_mu: int = 50, ratio: float = 0.01) -> float:
        grid = self.mu_grid(l, n_mu, ratio) if grid is None else np.asarray(grid, dtype=float)
        if grid.size == 1:
            return float(grid[0])
        return float(grid[int(np.argmin(self.cv_curve(l, grid)))])

    def fit_cv(self, l: int, grid=None, n_mu: int = 50, ratio: float = 0.01) -> DecorrelationFit:
        grid = self.mu_grid(l, n_mu, ratio) if grid is None else np.asarray(grid, dtype=float)
        mu = self.cross_validate(l, grid)
        return self.fit(l, mu, warm_grid=grid)


def fit_decorrelation(folds: Sequence[Dataset], betas: Sequence[np.ndarray], loss: PiecewiseLinearLoss,
                      l: int, mu: float, h_gb: float, kernel: GlobalKernel = GAUSSIAN,
                      weight_mode: str = "floored", tol: float = 1e-10) -> DecorrelationFit:
    """Kernel-weighted lasso of covariate ``l`` on the others, pooled over folds."""
    problem = DecorrelationProblem(folds, betas, loss, h_gb, kernel, weight_mode)
    return problem.fit(l, mu, tol=tol)


def cross_validate_mu(folds: Sequence[Dataset], betas: Sequence[np.ndarray], loss: PiecewiseLinearLoss,
                      l: int, h_gb: float, grid=None, cv_folds: int = 5, seed: int | RngStream = 0,
                      kernel: GlobalKernel = GAUSSIAN, weight_mode: str = "floored") -> float:
    problem = DecorrelationProblem(folds, betas, loss, h_gb, kernel, weight_mode, cv_folds, seed)
    return problem.cross_validate(l, grid)
