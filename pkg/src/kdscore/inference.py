"""Cross-fitted kernel-smoothed decorrelated score tests and debiased intervals.

For a target coordinate ``l`` the pipeline is

1. split the sample into ``K`` folds;
2. fit the penalised ERM on each fold's complement (penalty chosen by CV);
3. fit one decorrelation vector ``w`` on the pooled folds, each sample
   weighted by the global-kernel Hessian weight at its complement fit;
4. average the smoothed score ``psi_i`` over folds to get ``S`` and the
   variance ``sigma^2``, with ``psi_i(b) = sum_a a W_a phi~'(a x_i'b) r_i`` and
   residual ``r_i = x_il - x_i,-l' w``;
5. report ``p = 2(1 - Phi(sqrt(n)|S| / sigma))`` and the one-step estimate
   ``beta~ = beta_bar - S_unrestricted / I`` with its Wald interval.

Coordinate and fold indices are 0-based throughout the library.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import Dataset
from .errors import DegenerateVariance, DimensionMismatch, InvalidInput, NearSingularInformation
from .folds import FoldPlan, make_fold_plan
from .loss_kernel import GAUSSIAN, QUINTIC, BandwidthConfig, GlobalKernel, LocalKernel, PiecewiseLinearLoss
from .loss_kernel import smoothed_gradient
from .solver import (
    WEIGHT_MODES,
    DecorrelationProblem,
    ErmFit,
    SolverOptions,
    fit_erm_cv,
    hessian_weights,
)
from .stats_util import RngStream, normal_quantile, two_sided_p_value

__all__ = [
    "FoldPlan",
    "InferenceConfig",
    "FitResult",
    "ScoreParts",
    "CoordinateInference",
    "make_fold_plan",
    "fit_complements",
    "decorrelated_score",
    "information_estimate",
    "score_parts",
    "assemble",
    "test_coordinate",
    "debiased_estimate",
    "test_all_coordinates",
    "relabel_folds",
]


@dataclass(frozen=True)
class InferenceConfig:
    """Settings for the cross-fitted inference pipeline.

    ``lambda_grid`` / ``mu_grid`` of ``None`` mean the default 50-point
    log-spaced grids from the annihilating value down to 1% of it.
    ``weight_mode`` selects the decorrelation Hessian weights: ``"floored"``
    includes the sample weights with negatives set to 0, ``"unweighted"``
    ignores them.
    """

    K: int = 2
    bandwidths: BandwidthConfig = field(default_factory=BandwidthConfig)
    lambda_grid: tuple[float, ...] | None = None
    n_lambda: int = 50
    lambda_ratio: float = 0.01
    mu_grid: tuple[float, ...] | None = None
    n_mu: int = 50
    mu_ratio: float = 0.01
    cv_folds: int = 5
    seed: int = 0
    alpha: float = 0.05
    info_floor: float = 1e-8
    weight_mode: str = "floored"
    solver: SolverOptions = field(default_factory=SolverOptions)
    local_kernel: LocalKernel = field(default=QUINTIC, compare=False)
    global_kernel: GlobalKernel = field(default=GAUSSIAN, compare=False)

    def __post_init__(self):
        if self.K < 2:
            raise InvalidInput(f"K must be at least 2, got {self.K}")
        if not 0 < self.alpha < 1:
            raise InvalidInput(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.weight_mode not in WEIGHT_MODES:
            raise InvalidInput(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.cv_folds < 2:
            raise InvalidInput("cv_folds must be at least 2")
        if not self.info_floor >= 0:
            raise InvalidInput("info_floor must be nonnegative")


@dataclass(frozen=True)
class FitResult:
    """Complement fits ``beta^(-k)`` for a fold plan."""

    plan: FoldPlan
    folds: tuple[Dataset, ...] = field(repr=False)
    fits: tuple[ErmFit, ...]

    @property
    def betas(self) -> list[np.ndarray]:
        return [f.beta for f in self.fits]

    @property
    def lambdas(self) -> list[float]:
        return [f.lam for f in self.fits]


@dataclass(frozen=True)
class ScoreParts:
    """Unassembled per-coordinate quantities (what the two-half procedure averages)."""

    l: int
    score: float
    score_unrestricted: float
    sigma2: float
    info: float
    beta_bar: float

    @staticmethod
    def average(parts: Sequence["ScoreParts"]) -> "ScoreParts":
        if len({p.l for p in parts}) != 1:
            raise DimensionMismatch("can only average parts for the same coordinate")
        m = len(parts)
        return ScoreParts(
            l=parts[0].l,
            score=sum(p.score for p in parts) / m,
            score_unrestricted=sum(p.score_unrestricted for p in parts) / m,
            sigma2=sum(p.sigma2 for p in parts) / m,
            info=sum(p.info for p in parts) / m,
            beta_bar=sum(p.beta_bar for p in parts) / m,
        )


@dataclass(frozen=True)
class CoordinateInference:
    """Test and interval for one coordinate.

    ``score`` is evaluated with coordinate ``l`` of each complement fit set to
    zero; ``score_unrestricted`` at the fits themselves (used for ``beta_tilde``).
    CI fields are NaN when the information estimate was too small and the caller
    did not require an interval.
    """

    l: int
    score: float
    sigma_hat: float
    info_hat: float
    beta_bar: float
    beta_tilde: float
    z: float
    p_value: float
    ci_low: float
    ci_high: float
    alpha: float
    n: int
    score_unrestricted: float = math.nan

    @property
    def ci_width(self) -> float:
        return self.ci_high - self.ci_low

    def with_alpha(self, alpha: float, info_floor: float = 1e-8) -> "CoordinateInference":
        """Same record with the interval recomputed at another level."""
        parts = ScoreParts(self.l, self.score, self.score_unrestricted, self.sigma_hat**2, self.info_hat,
                           self.beta_bar)
        return assemble(parts, self.n, alpha, info_floor, require_ci=True)


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def _check_pairs(folds, betas, w, l):
    if len(folds) == 0 or len(folds) != len(betas):
        raise DimensionMismatch("need one complement fit per fold")
    p = folds[0].p
    if not 0 <= l < p:
        raise DimensionMismatch(f"coordinate {l} out of range for p={p}")
    w = np.asarray(w, dtype=float)
    if w.shape != (p - 1,):
        raise DimensionMismatch(f"w must have length p-1={p - 1}, got {w.shape}")
    for data, beta in zip(folds, betas):
        if data.p != p or np.shape(beta) != (p,):
            raise DimensionMismatch("fold dimensions disagree")
    return p, w


def _residual(X, l, w):
    keep = np.arange(X.shape[1]) != l
    return X[:, l] - X[:, keep] @ w


def _psi(data: Dataset, beta, r, loss, h_lo, kernel):
    z = data.X @ beta
    wp = data.weight_pair()
    g = wp.w_plus * smoothed_gradient(loss, kernel, h_lo, z) - wp.w_minus * smoothed_gradient(loss, kernel, h_lo, -z)
    return g * r


def _score_sums(folds, betas, w, loss, l, h_lo, kernel):
    """``(S_null, S_unrestricted, sigma^2)`` before any degeneracy check."""
    K = len(folds)
    s_null = s_full = var = 0.0
    for data, beta in zip(folds, betas):
        beta = np.asarray(beta, dtype=float)
        r = _residual(data.X, l, w)
        zeroed = beta.copy()
        zeroed[l] = 0.0
        psi_full = _psi(data, beta, r, loss, h_lo, kernel)
        s_null += _psi(data, zeroed, r, loss, h_lo, kernel).mean() / K
        s_full += psi_full.mean() / K
        var += np.mean(psi_full**2) / K
    return float(s_null), float(s_full), float(var)


def decorrelated_score(folds: Sequence[Dataset], betas: Sequence[np.ndarray], w, loss: PiecewiseLinearLoss,
                       l: int, h_lo: float, kernel: LocalKernel = QUINTIC, null_at_zero: bool = True
                       ) -> tuple[float, float]:
    """Fold-averaged smoothed decorrelated score and its standard deviation.

    Parameters
    ----------
    folds, betas
        Evaluation folds and the fits on their complements.
    w : array, length p-1
        Decorrelation vector for coordinate ``l``.
    null_at_zero : bool
        Evaluate the score with ``beta[l] = 0`` (the null-restricted fit). The
        standard deviation always uses the fits unchanged.

    Returns
    -------
    S, sigma_hat : float

    Raises
    ------
    DegenerateVariance
        If ``sigma_hat`` is zero or not finite.
    """
    _, w = _check_pairs(folds, betas, w, l)
    s_null, s_full, var = _score_sums(folds, betas, w, loss, l, h_lo, kernel)
    sigma = math.sqrt(var) if var > 0 else 0.0
    if not (sigma > 0 and math.isfinite(sigma)):
        raise DegenerateVariance(f"score variance for coordinate {l} is zero")
    return (s_null if null_at_zero else s_full), sigma


def information_estimate(folds: Sequence[Dataset], betas: Sequence[np.ndarray], w, loss: PiecewiseLinearLoss,
                         global_kernel: GlobalKernel, h_gb: float, l: int) -> float:
    """Fold average of ``sum_a W_a hw(a x'b) r^2`` (unfloored weights)."""
    _, w = _check_pairs(folds, betas, w, l)
    K = len(folds)
    total = 0.0
    for data, beta in zip(folds, betas):
        r = _residual(data.X, l, w)
        omega = hessian_weights(data, beta, loss, h_gb, global_kernel, mode="raw")
        total += np.mean(omega * r * r) / K
    return float(total)


def assemble(parts: ScoreParts, n: int, alpha: float, info_floor: float = 1e-8, require_ci: bool = True
             ) -> CoordinateInference:
    """Turn score, variance and information into a p-value and interval."""
    if not 0 < alpha < 1:
        raise InvalidInput(f"alpha must lie in (0, 1), got {alpha}")
    sigma = math.sqrt(parts.sigma2) if parts.sigma2 > 0 else 0.0
    if not (sigma > 0 and math.isfinite(sigma)):
        raise DegenerateVariance(f"score variance for coordinate {parts.l} is zero")
    root_n = math.sqrt(n)
    z = root_n * abs(parts.score) / sigma
    p = two_sided_p_value(z)
    if parts.info >= info_floor and parts.info > 0:
        beta_tilde = parts.beta_bar - parts.score_unrestricted / parts.info
        half = normal_quantile(1.0 - alpha / 2.0) * sigma / (root_n * parts.info)
        lo, hi = beta_tilde - half, beta_tilde + half
    elif require_ci:
        raise NearSingularInformation(
            f"information estimate {parts.info:.3g} for coordinate {parts.l} is below {info_floor:.3g}"
        )
    else:
        beta_tilde = lo = hi = math.nan
    return CoordinateInference(
        l=parts.l, score=parts.score, sigma_hat=sigma, info_hat=parts.info, beta_bar=parts.beta_bar,
        beta_tilde=beta_tilde, z=z, p_value=p, ci_low=lo, ci_high=hi, alpha=alpha, n=int(n),
        score_unrestricted=parts.score_unrestricted,
    )


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def _stream(config: InferenceConfig, stream: RngStream | None) -> RngStream:
    return stream if stream is not None else RngStream(config.seed)


def fit_complements(data: Dataset, loss: PiecewiseLinearLoss, config: InferenceConfig,
                    stream: RngStream | None = None) -> FitResult:
    """Fold plan plus a cross-validated ERM fit on each fold's complement."""
    stream = _stream(config, stream)
    plan = make_fold_plan(data.n, config.K, stream.child(0))
    folds, fits = [], []
    for k in range(config.K):
        comp = data.subset(plan.complement(k))
        fits.append(
            fit_erm_cv(comp, loss, grid=config.lambda_grid, folds=config.cv_folds, seed=stream.child(1).child(k),
                       n_lambda=config.n_lambda, lambda_ratio=config.lambda_ratio, options=config.solver)
        )
        folds.append(data.subset(plan.members(k)))
    return FitResult(plan=plan, folds=tuple(folds), fits=tuple(fits))


def _check_targets(targets, p):
    targets = [int(t) for t in targets]
    bad = [t for t in targets if not 0 <= t < p]
    if bad:
        raise DimensionMismatch(f"target indices {bad} out of range for p={p}")
    return targets


def score_parts(data: Dataset, loss: PiecewiseLinearLoss, config: InferenceConfig, targets: Sequence[int],
                stream: RngStream | None = None, fit: FitResult | None = None) -> list[ScoreParts]:
    """The cross-fitted score procedure up to (not including) the p-value, for several coordinates.

    The complement fits and the pooled Gram matrices are shared; each target
    gets its own cross-validated decorrelation fit.
    """
    targets = _check_targets(targets, data.p)
    if not targets:
        return []
    stream = _stream(config, stream)
    h_lo, h_gb = config.bandwidths.resolve(data.n, data.p)
    if fit is None:
        fit = fit_complements(data, loss, config, stream)
    folds, betas = list(fit.folds), fit.betas
    problem = DecorrelationProblem(folds, betas, loss, h_gb, config.global_kernel, config.weight_mode,
                                   config.cv_folds, stream.child(2),
                                   row_ids=[fit.plan.members(k) for k in range(fit.plan.K)])
    beta_bar = np.mean(np.vstack(betas), axis=0)
    out = []
    for l in targets:
        grid = None if config.mu_grid is None else np.asarray(config.mu_grid, dtype=float)
        if grid is None:
            grid = problem.mu_grid(l, config.n_mu, config.mu_ratio)
        w = problem.fit_cv(l, grid).w
        s_null, s_full, var = _score_sums(folds, betas, w, loss, l, h_lo, config.local_kernel)
        info = information_estimate(folds, betas, w, loss, config.global_kernel, h_gb, l)
        out.append(ScoreParts(l=l, score=s_null, score_unrestricted=s_full, sigma2=var, info=info,
                              beta_bar=float(beta_bar[l])))
    return out


def test_all_coordinates(data: Dataset, loss: PiecewiseLinearLoss, config: InferenceConfig | None = None,
                         targets: Sequence[int] | None = None, alpha: float | None = None,
                         require_ci: bool = True) -> list[CoordinateInference]:
    """Score test and debiased interval for each target (all coordinates if ``None``)."""
    config = config or InferenceConfig()
    alpha = config.alpha if alpha is None else alpha
    targets = range(data.p) if targets is None else targets
    parts = score_parts(data, loss, config, targets)
    return [assemble(p, data.n, alpha, config.info_floor, require_ci) for p in parts]


def test_coordinate(data: Dataset, loss: PiecewiseLinearLoss, config: InferenceConfig | None = None,
                    l: int = 0) -> CoordinateInference:
    """Score test of ``beta*_l = 0``; interval fields are NaN if the information is degenerate."""
    config = config or InferenceConfig()
    return test_all_coordinates(data, loss, config, [l], config.alpha, require_ci=False)[0]


def debiased_estimate(data: Dataset, loss: PiecewiseLinearLoss, config: InferenceConfig | None = None,
                      l: int = 0, alpha: float | None = None) -> CoordinateInference:
    """One-step debiased estimate of ``beta*_l`` with a ``1 - alpha`` interval."""
    config = config or InferenceConfig()
    return test_all_coordinates(data, loss, config, [l], alpha, require_ci=True)[0]


test_all_coordinates.__test__ = False  # keep pytest from collecting the library functions
test_coordinate.__test__ = False


def relabel_folds(result: FitResult, order: Sequence[int]) -> FitResult:
    """Same partition with fold ids permuted (``new id = order[old id]``)."""
    order = np.asarray(order)
    if sorted(order.tolist()) != list(range(result.plan.K)):
        raise InvalidInput("order must be a permutation of the fold ids")
    inv = np.argsort(order)
    plan = replace(result.plan, assignment=order[result.plan.assignment])
    return FitResult(plan=plan, folds=tuple(result.folds[i] for i in inv), fits=tuple(result.fits[i] for i in inv))
