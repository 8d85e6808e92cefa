"""Scenario I / II generators and the replicated-experiment harness.

Both scenarios draw a two-group Gaussian mixture: with probability 0.4 a
sample comes from Group I, ``N(xi mu0, I - 0.1 e1 e1')``, otherwise from
Group II, ``N(xi mu1, I)``. Scenario I labels the groups directly; Scenario II
assigns treatment through a quadratic propensity and draws an outcome whose
treatment effect has opposite signs in the two groups.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import optimize, sparse

from .dataset import Dataset
from .errors import DegeneracyError, InvalidInput, KdscoreError
from .folds import make_fold_plan
from .inference import InferenceConfig, ScoreParts, assemble, score_parts
from .loss_kernel import GAUSSIAN, PiecewiseLinearLoss, auto_bandwidths, hessian_weight, hinge
from .nuisance import NuisanceConfig, algorithm2_parts, cross_fitted_weights
from .solver import fit_erm_cv
from .stats_util import RngStream, normal_quantile, two_sided_p_value

__all__ = [
    "MU0",
    "MU1",
    "GAMMA",
    "PRESETS",
    "ScenarioConfig",
    "ReplicateRecord",
    "MetricsReport",
    "simulate_scenario1",
    "simulate_scenario2",
    "scenario2_propensity",
    "simulate",
    "compute_truth",
    "adhoc_baseline",
    "run_replicate",
    "run_experiment",
]

MU0 = (-1.0, 1.0, -0.5, 0.5)
MU1 = (1.0, -1.0, -1.0, -1.0)
GAMMA = (-0.4, -0.4, 0.4, -0.4)
GROUP_I_PROB = 0.4
N_TARGETS = 8

PRESETS = {
    "desk": dict(n=500, p=200, replicates=200),
    "paper": dict(n=800, p=800, replicates=500),
}

# stream ids under the experiment seed
_DATA, _INFERENCE, _TRUTH = 0, 1, 2


def _padded(head, p):
    v = np.zeros(p)
    v[: len(head)] = head
    return v


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation setting.

    ``propensity_form`` only affects Scenario II: ``"ratio"`` uses
    ``e / (1 + e)`` with ``e = 0.25 (X1^2 + X2^2 + X1 X2)``; ``"logistic"``
    uses ``exp(e) / (1 + exp(e))``.
    """

    scenario: str
    n: int
    p: int
    xi: float
    replicates: int = 1
    seed: int = 0
    propensity_form: str = "ratio"

    def __post_init__(self):
        if self.scenario not in ("I", "II"):
            raise InvalidInput(f"scenario must be 'I' or 'II', got {self.scenario!r}")
        if self.p < N_TARGETS:
            raise InvalidInput(f"scenarios need p >= {N_TARGETS}, got {self.p}")
        if self.n < 4:
            raise InvalidInput("n must be at least 4")
        if self.replicates < 1:
            raise InvalidInput("replicates must be at least 1")
        if not (self.xi >= 0 and math.isfinite(self.xi)):
            raise InvalidInput("xi must be a finite nonnegative number")
        if self.propensity_form not in ("ratio", "logistic"):
            raise InvalidInput("propensity_form must be 'ratio' or 'logistic'")

    @classmethod
    def preset(cls, scenario: str, name: str, xi: float, seed: int = 0, **overrides) -> "ScenarioConfig":
        if name not in PRESETS:
            raise InvalidInput(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(scenario=scenario, xi=xi, seed=seed, **{**PRESETS[name], **overrides})

    def stream(self, replicate: int, purpose: int = _DATA) -> RngStream:
        return RngStream(self.seed, (purpose, int(replicate)))


def _mixture(n, p, xi, rng):
    group1 = rng.random(n) < GROUP_I_PROB
    Z = rng.standard_normal((n, p))
    # I - 0.1 e1 e1' has square root diag(sqrt(0.9), 1, ..., 1)
    Z[group1, 0] *= math.sqrt(0.9)
    X = Z + xi * np.where(group1[:, None], _padded(MU0, p), _padded(MU1, p))
    return X, group1


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, RngStream):
        return seed.generator()
    if isinstance(seed, np.random.Generator):
        return seed
    return RngStream(int(seed)).generator()


def simulate_scenario1(n: int, p: int, xi: float, seed) -> Dataset:
    """Group I labelled ``A = 1``, Group II ``A = -1``."""
    if p < 4:
        raise InvalidInput("Scenario I needs p >= 4")
    X, group1 = _mixture(n, p, xi, _rng(seed))
    return Dataset(X=X, A=np.where(group1, 1.0, -1.0))


def scenario2_propensity(X: np.ndarray, form: str = "ratio") -> np.ndarray:
    """``P(A = 1 | X)`` for Scenario II."""
    e = 0.25 * (X[:, 0] ** 2 + X[:, 1] ** 2 + X[:, 0] * X[:, 1])
    if form == "ratio":
        return e / (1.0 + e)
    if form == "logistic":
        return 1.0 / (1.0 + np.exp(-e))
    raise InvalidInput(f"unknown propensity form {form!r}")


def scenario2_effect(X: np.ndarray, group1: np.ndarray) -> np.ndarray:
    """Treatment effect ``C(X)``: ``|X1| + 0.5`` in Group I, its negative in Group II."""
    c = np.abs(X[:, 0]) + 0.5
    return np.where(group1, c, -c)


def simulate_scenario2(n: int, p: int, xi: float, seed, propensity_form: str = "ratio",
                       return_groups: bool = False):
    """Treatment ``A`` from the quadratic propensity and ``Y = (X'g)^2 + C(X) 1{A=1} + eps``."""
    if p < 4:
        raise InvalidInput("Scenario II needs p >= 4")
    rng = _rng(seed)
    X, group1 = _mixture(n, p, xi, rng)
    prop = scenario2_propensity(X, propensity_form)
    A = np.where(rng.random(n) < prop, 1.0, -1.0)
    eps = rng.standard_normal(n)
    Y = (X @ _padded(GAMMA, p)) ** 2 + scenario2_effect(X, group1) * (A == 1) + eps
    data = Dataset(X=X, A=A, Y=Y)
    return (data, group1) if return_groups else data


def simulate(config: ScenarioConfig, replicate: int = 0, n: int | None = None) -> Dataset:
    """Replicate ``replicate`` of ``config`` (optionally at another sample size)."""
    n = config.n if n is None else n
    stream = config.stream(replicate)
    if config.scenario == "I":
        return simulate_scenario1(n, config.p, config.xi, stream)
    return simulate_scenario2(n, config.p, config.xi, stream, config.propensity_form)


# ---------------------------------------------------------------------------
# Truth
# ---------------------------------------------------------------------------


def _truth_fit(args):
    config, loss, rep, n_truth, inference, nuisance = args
    data = simulate(config, rep, n=n_truth)
    stream = config.stream(rep, _TRUTH)
    if config.scenario == "II":
        halves = make_fold_plan(data.n, 2, stream.child(0))
        parts = []
        for h in (0, 1):
            idx = halves.members(h)
            w = cross_fitted_weights(data.subset(halves.members(1 - h)), data.subset(idx), "itr", nuisance)
            parts.append((idx, w))
        order = np.concatenate([idx for idx, _ in parts])
        wp = np.concatenate([w.w_plus for _, w in parts])
        wm = np.concatenate([w.w_minus for _, w in parts])
        data = data.subset(order).with_weights((wp, wm))
    fit = fit_erm_cv(data, loss, grid=inference.lambda_grid, folds=inference.cv_folds, seed=stream.child(1),
                     n_lambda=inference.n_lambda, lambda_ratio=inference.lambda_ratio, options=inference.solver)
    return fit.beta


def compute_truth(config: ScenarioConfig, loss: PiecewiseLinearLoss | None = None, n_truth: int = 2500,
                  replicates_truth: int = 500, zero_tol: float = 0.01,
                  inference: InferenceConfig | None = None, nuisance: NuisanceConfig | None = None,
                  jobs: int = 1) -> np.ndarray:
    """Average cross-validated penalised ERM fit over large-sample replicates.

    Scenario II fits use cross-fitted kernel-regression weights. Entries with
    ``|average| < zero_tol`` are set to 0. Truth replicates use their own
    random streams, disjoint from the experiment's.
    """
    if n_truth < 4 or replicates_truth < 1:
        raise InvalidInput("need n_truth >= 4 and replicates_truth >= 1")
    loss = loss or hinge()
    inference = inference or InferenceConfig()
    args = [(config, loss, rep, n_truth, inference, nuisance) for rep in range(replicates_truth)]
    betas = _map(_truth_fit, args, jobs)
    avg = np.mean(np.vstack(betas), axis=0)
    return np.where(np.abs(avg) < zero_tol, 0.0, avg)


# ---------------------------------------------------------------------------
# Ad-hoc baseline
# ---------------------------------------------------------------------------


def _unpenalized_hinge(X: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``argmin_b mean(max(0, 1 - A x'b))`` as a linear program."""
    n, d = X.shape
    # variables [b (free), s >= 0]; s_i >= 1 - A_i x_i'b
    c = np.concatenate([np.zeros(d), np.full(n, 1.0 / n)])
    A_ub = sparse.hstack([sparse.csr_matrix(-(A[:, None] * X)), -sparse.identity(n, format="csr")], format="csr")
    res = optimize.linprog(c, A_ub=A_ub, b_ub=-np.ones(n), bounds=[(None, None)] * d + [(0, None)] * n,
                           method="highs")
    if res.status != 0:
        raise DegeneracyError(f"baseline refit failed: {res.message}")
    return res.x[:d]


def adhoc_baseline(data: Dataset, loss: PiecewiseLinearLoss, config: InferenceConfig, targets: Sequence[int],
                   alpha: float, stream: RngStream | None = None) -> list[dict]:
    """baseline-adhoc (simplified): lasso selection, unpenalised hinge refit, sandwich variance.

    No sample splitting or decorrelation. The refit covers the selected
    covariates plus the targets; the variance is ``H^-1 V H^-1 / n`` with
    ``V`` the outer product of per-sample hinge subgradients and ``H`` the
    Gaussian-kernel Hessian at the automatic global bandwidth. Only implied
    (unweighted) data are supported.
    """
    if data.weights is not None:
        raise InvalidInput("the ad-hoc baseline supports unweighted classification only")
    if loss.knots != (1.0,) or loss.jumps != (1.0,) or loss.base_slope != -1.0:
        raise InvalidInput("the ad-hoc baseline is implemented for the hinge loss only")
    stream = stream if stream is not None else RngStream(config.seed)
    fit = fit_erm_cv(data, loss, grid=config.lambda_grid, folds=config.cv_folds, seed=stream.child(0),
                     n_lambda=config.n_lambda, lambda_ratio=config.lambda_ratio, options=config.solver)
    support = sorted(set(np.flatnonzero(fit.beta).tolist()) | set(int(t) for t in targets))
    Xs = data.X[:, support]
    b = _unpenalized_hinge(Xs, data.A)
    m = data.A * (Xs @ b)
    g = -(m < 1.0).astype(float)[:, None] * (data.A[:, None] * Xs)
    V = g.T @ g / data.n
    _, h_gb = auto_bandwidths(data.n, data.p)
    H = Xs.T @ (hessian_weight(loss, GAUSSIAN, h_gb, m)[:, None] * Xs) / data.n
    Hinv = np.linalg.pinv(H)
    cov = Hinv @ V @ Hinv / data.n
    zq = normal_quantile(1.0 - alpha / 2.0)
    out = []
    for t in targets:
        j = support.index(int(t))
        se = math.sqrt(max(cov[j, j], 0.0))
        est = float(b[j])
        z = abs(est) / se if se > 0 else math.inf
        out.append(dict(l=int(t), estimate=est, se=se, z=z, p_value=two_sided_p_value(z),
                        ci_low=est - zq * se, ci_high=est + zq * se))
    return out


# ---------------------------------------------------------------------------
# Experiment harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicateRecord:
    """Outcome of one replicate; ``error`` is set (and arrays are NaN) if it was skipped."""

    index: int
    p_values: tuple[float, ...]
    estimates: tuple[float, ...]
    ci_low: tuple[float, ...]
    ci_high: tuple[float, ...]
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _nan_record(index, k, error):
    nan = (math.nan,) * k
    return ReplicateRecord(index, nan, nan, nan, nan, error)


def run_replicate(config: ScenarioConfig, loss: PiecewiseLinearLoss, inference: InferenceConfig,
                  replicate: int, alpha: float, targets: Sequence[int] = tuple(range(N_TARGETS)),
                  method: str = "proposed", nuisance: NuisanceConfig | None = None) -> ReplicateRecord:
    """Simulate one dataset and run the requested procedure on the targets."""
    targets = list(targets)
    try:
        data = simulate(config, replicate)
        stream = config.stream(replicate, _INFERENCE)
        if method == "adhoc":
            rows = adhoc_baseline(data, loss, inference, targets, alpha, stream)
            return ReplicateRecord(
                replicate,
                tuple(r["p_value"] for r in rows),
                tuple(r["estimate"] for r in rows),
                tuple(r["ci_low"] for r in rows),
                tuple(r["ci_high"] for r in rows),
            )
        if config.scenario == "I":
            parts = score_parts(data, loss, inference, targets, stream)
        else:
            first, second = algorithm2_parts(data, "itr", loss, inference, targets, nuisance, stream)
            parts = [ScoreParts.average([a, b]) for a, b in zip(first, second)]
        # the test does not need the information estimate; an interval that cannot
        # be formed (raw-weight information below the floor) is left as NaN
        recs = [assemble(p, data.n, alpha, inference.info_floor, require_ci=False) for p in parts]
    except KdscoreError as exc:
        return _nan_record(replicate, len(targets), f"{type(exc).__name__}: {exc}")
    return ReplicateRecord(
        replicate,
        tuple(r.p_value for r in recs),
        tuple(r.beta_tilde for r in recs),
        tuple(r.ci_low for r in recs),
        tuple(r.ci_high for r in recs),
    )


def _run_replicate_args(args):
    return run_replicate(*args)


def _map(fn, args, jobs):
    jobs = max(1, int(jobs))
    if jobs == 1 or len(args) <= 1:
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
        return list(pool.map(fn, args, chunksize=1))


@dataclass(frozen=True)
class MetricsReport:
    """Aggregated results; every rate is recomputable from the stored matrices.

    ``decisions[r, j]`` is 1 if replicate ``r`` rejected target ``j``, 0 if
    not, and -1 for skipped replicates. Coverage and length average over the
    completed replicates whose interval exists (see ``ci_unavailable``). ``runtime`` is wall-clock seconds and is
    not part of the reproducible output.
    """

    config: ScenarioConfig
    method: str
    alpha: float
    targets: tuple[int, ...]
    truth: tuple[float, ...]
    decisions: np.ndarray = field(repr=False)
    p_values: np.ndarray = field(repr=False)
    estimates: np.ndarray = field(repr=False)
    ci_low: np.ndarray = field(repr=False)
    ci_high: np.ndarray = field(repr=False)
    errors: tuple[tuple[int, str], ...] = ()
    runtime: float = field(default=0.0, compare=False)

    @classmethod
    def from_records(cls, config, method, alpha, targets, truth, records: Sequence[ReplicateRecord],
                     runtime: float = 0.0) -> "MetricsReport":
        records = sorted(records, key=lambda r: r.index)
        P = np.array([r.p_values for r in records], dtype=float).reshape(len(records), len(targets))
        dec = np.where(np.isnan(P), -1, (P <= alpha).astype(int))
        return cls(
            config=config, method=method, alpha=float(alpha), targets=tuple(int(t) for t in targets),
            truth=tuple(float(t) for t in truth), decisions=dec, p_values=P,
            estimates=np.array([r.estimates for r in records], dtype=float).reshape(P.shape),
            ci_low=np.array([r.ci_low for r in records], dtype=float).reshape(P.shape),
            ci_high=np.array([r.ci_high for r in records], dtype=float).reshape(P.shape),
            errors=tuple((r.index, r.error) for r in records if not r.ok),
            runtime=runtime,
        )

    @property
    def replicates(self) -> int:
        return int(self.decisions.shape[0])

    @property
    def completed(self) -> np.ndarray:
        return np.all(self.decisions >= 0, axis=1)

    @property
    def skip_count(self) -> int:
        return int((~self.completed).sum())

    @property
    def rejection_rates(self) -> np.ndarray:
        ok = self.decisions[self.completed]
        return ok.mean(axis=0) if ok.shape[0] else np.full(len(self.targets), math.nan)

    def _target_truth(self) -> np.ndarray:
        return np.array([self.truth[t] for t in self.targets])

    @property
    def null_targets(self) -> tuple[int, ...]:
        return tuple(t for t, v in zip(self.targets, self._target_truth()) if v == 0)

    @property
    def signal_targets(self) -> tuple[int, ...]:
        return tuple(t for t, v in zip(self.targets, self._target_truth()) if v != 0)

    @property
    def type_one_error(self) -> dict[int, float]:
        rates = self.rejection_rates
        return {t: float(r) for t, r, v in zip(self.targets, rates, self._target_truth()) if v == 0}

    @property
    def power(self) -> dict[int, float]:
        rates = self.rejection_rates
        return {t: float(r) for t, r, v in zip(self.targets, rates, self._target_truth()) if v != 0}

    def _ci_mask(self) -> np.ndarray:
        return self.completed[:, None] & np.isfinite(self.ci_low) & np.isfinite(self.ci_high)

    @property
    def ci_unavailable(self) -> np.ndarray:
        """Per target, completed replicates without an interval."""
        return (self.completed[:, None] & ~self._ci_mask()).sum(axis=0)

    @property
    def coverage_by_target(self) -> np.ndarray:
        mask = self._ci_mask()
        truth = self._target_truth()
        inside = ((self.ci_low <= truth) & (truth <= self.ci_high) & mask).sum(axis=0)
        count = mask.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(count > 0, inside / np.maximum(count, 1), math.nan)

    @property
    def coverage(self) -> float:
        return float(np.mean(self.coverage_by_target))

    @property
    def ci_length_by_target(self) -> np.ndarray:
        mask = self._ci_mask()
        width = np.where(mask, self.ci_high - self.ci_low, 0.0).sum(axis=0)
        count = mask.sum(axis=0)
        return np.where(count > 0, width / np.maximum(count, 1), math.nan)

    @property
    def mean_ci_length(self) -> float:
        return float(np.mean(self.ci_length_by_target))

    def p_values_for(self, targets: Sequence[int]) -> np.ndarray:
        cols = [self.targets.index(t) for t in targets]
        return self.p_values[self.completed][:, cols].ravel()


def run_experiment(config: ScenarioConfig, loss: PiecewiseLinearLoss | None = None,
                   inference: InferenceConfig | None = None, truth: Sequence[float] | None = None,
                   alpha: float = 0.05, targets: Sequence[int] = tuple(range(N_TARGETS)), jobs: int = 1,
                   method: str = "proposed", nuisance: NuisanceConfig | None = None) -> MetricsReport:
    """Run ``config.replicates`` replicates and aggregate.

    Scenario I uses the cross-fitted score test; Scenario II the two-half
    procedure with treatment-rule weights. ``method="adhoc"`` swaps in the
    simplified baseline (Scenario I only). Replicate ``r`` draws its data and
    inference randomness from streams keyed by ``(seed, r)``, so results do not
    depend on ``jobs`` or execution order.
    """
    loss = loss or hinge()
    inference = inference or InferenceConfig()
    if method not in ("proposed", "adhoc"):
        raise InvalidInput(f"method must be 'proposed' or 'adhoc', got {method!r}")
    if method == "adhoc" and config.scenario != "I":
        raise InvalidInput("the ad-hoc baseline is available for Scenario I only")
    if not 0 < alpha <= 1:
        raise InvalidInput(f"alpha must lie in (0, 1], got {alpha}")
    truth = np.zeros(config.p) if truth is None else np.asarray(truth, dtype=float)
    targets = [int(t) for t in targets]
    if truth.size < max(targets, default=-1) + 1 or truth.size < N_TARGETS:
        raise InvalidInput("truth must cover every target (and at least 8 coordinates)")
    if any(not 0 <= t < config.p for t in targets):
        raise InvalidInput("targets out of range")
    # alpha = 1 is legal here (reject whenever p < 1) but not as an interval level
    ci_alpha = alpha if alpha < 1 else inference.alpha
    start = time.perf_counter()
    args = [(config, loss, inference, r, ci_alpha, targets, method, nuisance) for r in range(config.replicates)]
    records = _map(_run_replicate_args, args, jobs)
    return MetricsReport.from_records(config, method, alpha, targets, truth, records,
                                      runtime=time.perf_counter() - start)


def default_jobs() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
