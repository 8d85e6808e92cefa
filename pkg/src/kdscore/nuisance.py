"""AIPW weights, screened Nadaraya-Watson nuisance fits and two-half cross-fitting.

Two applications produce per-sample class weights ``(W_1, W_-1)``:

* missing labels (``R`` observed, ``A`` only where ``R = 1``)::

      W_a = 1{R=1, A=a} / pi - (1{R=1} - pi) / pi * p_a

* individualised treatment rules (``Y`` observed)::

      W_a = Y 1{A=a} / p_a + (1{A=a} - p_a) / p_a * Q_a

:func:`run_algorithm2` fits the nuisance functions on one half, builds the
weights on the other, runs the cross-fitted score machinery there, swaps the
halves and averages.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .dataset import Dataset, WeightPair
from .errors import HalfTooSmall, InsufficientData, InvalidInput, OverlapViolation
from .folds import make_fold_plan
from .inference import CoordinateInference, InferenceConfig, ScoreParts, assemble, score_parts
from .loss_kernel import PiecewiseLinearLoss
from .stats_util import RngStream

__all__ = [
    "APPLICATIONS",
    "NuisanceModel",
    "NuisanceConfig",
    "weights_missing_labels",
    "weights_itr",
    "fit_nuisance_kernel_regression",
    "screen_covariates",
    "cross_fitted_weights",
    "algorithm2_parts",
    "run_algorithm2",
]

APPLICATIONS = ("missing_labels", "itr")


@dataclass(frozen=True)
class NuisanceModel:
    """Nadaraya-Watson regression on a screened subset of covariates.

    Parameters
    ----------
    screening_indices : tuple of int
        Retained covariate columns.
    bandwidth : array
        Per-dimension Gaussian bandwidths on the retained columns.
    X_train, y_train : array
        Training snapshot (retained columns only).
    clip : (float, float) or None
        Bounds applied to every prediction.
    """

    screening_indices: tuple[int, ...]
    bandwidth: np.ndarray
    X_train: np.ndarray = field(repr=False)
    y_train: np.ndarray = field(repr=False)
    clip: tuple[float, float] | None = None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        Z = X[:, list(self.screening_indices)] / self.bandwidth
        T = self.X_train / self.bandwidth
        # squared distances, then stabilised log-weights
        d2 = (Z * Z).sum(1)[:, None] - 2.0 * Z @ T.T + (T * T).sum(1)[None, :]
        logw = -0.5 * np.maximum(d2, 0.0)
        logw -= logsumexp(logw, axis=1, keepdims=True)
        pred = np.exp(logw) @ self.y_train
        if self.clip is not None:
            pred = np.clip(pred, *self.clip)
        return pred

    __call__ = predict


@dataclass(frozen=True)
class NuisanceConfig:
    """Nuisance-estimation settings for :func:`run_algorithm2`.

    ``clip`` bounds propensity-type predictions; ``weight_cap`` (if set) bounds
    the resulting ``|W_a|``; ``min_half`` is the smallest allowed half size.
    """

    screen_k: int = 20
    clip: tuple[float, float] = (0.05, 0.95)
    weight_cap: float | None = None
    min_half: int = 10

    def __post_init__(self):
        lo, hi = self.clip
        if not 0 < lo <= hi < 1:
            raise InvalidInput(f"clip bounds must satisfy 0 < low <= high < 1, got {self.clip}")
        if self.screen_k < 1:
            raise InvalidInput("screen_k must be positive")


def _as_prediction(pred, X) -> np.ndarray:
    if callable(pred):
        return np.asarray(pred(X), dtype=float)
    return np.asarray(pred, dtype=float)


def _per_arm(pred, X) -> dict[int, np.ndarray]:
    """``{1: p_1, -1: p_-1}``; a single predictor is read as ``p_1``."""
    if isinstance(pred, Mapping):
        return {1: _as_prediction(pred[1], X), -1: _as_prediction(pred[-1], X)}
    p1 = _as_prediction(pred, X)
    return {1: p1, -1: 1.0 - p1}


def weights_missing_labels(data: Dataset, pi_hat, p_hat, floor: float = 0.0,
                           cap: float | None = None) -> WeightPair:
    """AIPW class weights for classification with missing labels.

    Parameters
    ----------
    pi_hat : callable or array
        Labelling probability ``P(R=1 | X)``.
    p_hat : callable, array or mapping
        ``P(A=1 | X)``, or ``{1: ..., -1: ...}`` for both labels.
    floor : float
        ``OverlapViolation`` is raised if any ``pi_hat <= floor``.
    """
    if data.R is None:
        raise InvalidInput("missing-label weights need the R column")
    pi = _as_prediction(pi_hat, data.X)
    if np.any(pi <= floor):
        raise OverlapViolation(f"labelling probability at or below {floor}")
    if np.any(pi > 1):
        raise InvalidInput("labelling probabilities must not exceed 1")
    p = _per_arm(p_hat, data.X)
    R = data.R
    out = {}
    for a in (1, -1):
        out[a] = (R * (data.A == a)) / pi - (R - pi) / pi * p[a]
    w = WeightPair(out[1], out[-1])
    if cap is not None:
        w.check_cap(cap)
    return w


def weights_itr(data: Dataset, p_hat, q_hat, floor: float = 0.0, cap: float | None = None) -> WeightPair:
    """AIPW class weights for individualised treatment rules.

    Parameters
    ----------
    p_hat : callable, array or mapping
        Propensity ``P(A=1 | X)``, or ``{1: ..., -1: ...}``.
    q_hat : mapping
        ``{1: Q_1, -1: Q_-1}`` outcome regressions (callables or arrays).
    floor : float
        ``OverlapViolation`` is raised if any ``p_a <= floor``.
    """
    if data.Y is None:
        raise InvalidInput("treatment-rule weights need the Y column")
    p = _per_arm(p_hat, data.X)
    out = {}
    for a in (1, -1):
        pa = p[a]
        if np.any(pa <= floor):
            raise OverlapViolation(f"propensity for arm {a} at or below {floor}")
        if np.any(pa > 1):
            raise InvalidInput("propensities must not exceed 1")
        ind = (data.A == a).astype(float)
        qa = _as_prediction(q_hat[a], data.X)
        out[a] = data.Y * ind / pa + (ind - pa) / pa * qa
    w = WeightPair(out[1], out[-1])
    if cap is not None:
        w.check_cap(cap)
    return w


def screen_covariates(X: np.ndarray, y: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` columns with the largest ``|Pearson correlation|`` with ``y``.

    Constant columns (or a constant ``y``) count as zero correlation; ties keep
    column order.
    """
    Xc = X - X.mean(0)
    yc = y - y.mean()
    denom = np.sqrt((Xc * Xc).sum(0) * (yc @ yc))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.where(denom > 0, np.abs(Xc.T @ yc) / denom, 0.0)
    order = np.argsort(-corr, kind="stable")
    return np.sort(order[: min(k, X.shape[1])])


def scott_bandwidth(X: np.ndarray) -> np.ndarray:
    """``n^(-1/(4+d))`` times the per-column standard deviation (1 for constant columns)."""
    n, d = X.shape
    sd = X.std(0, ddof=1) if n > 1 else np.zeros(d)
    sd = np.where(sd > 0, sd, 1.0)
    return n ** (-1.0 / (4 + d)) * sd


def fit_nuisance_kernel_regression(train: Dataset, response: str, arm: int | None = None,
                                   screen_k: int | None = None,
                                   bandwidth_rule: Callable[[np.ndarray], np.ndarray] = scott_bandwidth,
                                   clip: tuple[float, float] | None = (0.05, 0.95)) -> NuisanceModel:
    """Screen, then fit a product-Gaussian Nadaraya-Watson regression.

    Parameters
    ----------
    response : {"R", "A", "Y"}
        ``"R"``: labelling indicator on all rows. ``"A"``: ``1{A = arm}`` on the
        labelled rows. ``"Y"``: outcome on the rows with ``A = arm``.
    screen_k : int, optional
        Covariates kept; defaults to ``min(20, p)``.
    clip : (float, float) or None
        Bounds for propensity-type responses (``R`` and ``A``); ignored for ``Y``.
    """
    X = train.X
    if response == "R":
        if train.R is None:
            raise InvalidInput("response 'R' needs the R column")
        rows = np.ones(train.n, dtype=bool)
        y = train.R
    elif response == "A":
        if arm not in (1, -1):
            raise InvalidInput("response 'A' needs arm = 1 or -1")
        rows = np.ones(train.n, dtype=bool) if train.R is None else train.R == 1
        y = (train.A == arm).astype(float)
    elif response == "Y":
        if arm not in (1, -1):
            raise InvalidInput("response 'Y' needs arm = 1 or -1")
        if train.Y is None:
            raise InvalidInput("response 'Y' needs the Y column")
        rows = train.A == arm
        y = train.Y
        clip = None
    else:
        raise InvalidInput(f"unknown response {response!r}")
    if not np.any(rows):
        raise InsufficientData(f"no training rows for response {response!r}, arm {arm}")
    k = min(20, train.p) if screen_k is None else min(int(screen_k), train.p)
    if k < 1:
        raise InvalidInput("screen_k must be positive")
    Xr, yr = X[rows], np.asarray(y[rows], dtype=float)
    keep = screen_covariates(Xr, yr, k)
    Xs = np.ascontiguousarray(Xr[:, keep])
    return NuisanceModel(
        screening_indices=tuple(int(j) for j in keep),
        bandwidth=np.asarray(bandwidth_rule(Xs), dtype=float),
        X_train=Xs,
        y_train=yr,
        clip=None if clip is None else (float(clip[0]), float(clip[1])),
    )


def cross_fitted_weights(train: Dataset, evaluate: Dataset, application: str,
                         nuisance: NuisanceConfig | None = None) -> WeightPair:
    """Fit nuisance models on ``train`` and build AIPW weights for ``evaluate``."""
    nuisance = nuisance or NuisanceConfig()
    kw = dict(screen_k=nuisance.screen_k, clip=nuisance.clip)
    if application == "itr":
        p1 = fit_nuisance_kernel_regression(train, "A", arm=1, **kw)
        q = {a: fit_nuisance_kernel_regression(train, "Y", arm=a, **kw) for a in (1, -1)}
        return weights_itr(evaluate, p1, q, cap=nuisance.weight_cap)
    if application == "missing_labels":
        pi = fit_nuisance_kernel_regression(train, "R", **kw)
        p1 = fit_nuisance_kernel_regression(train, "A", arm=1, **kw)
        return weights_missing_labels(evaluate, pi, p1, cap=nuisance.weight_cap)
    raise InvalidInput(f"application must be one of {APPLICATIONS}, got {application!r}")


def _check_application(data: Dataset, application: str):
    if application not in APPLICATIONS:
        raise InvalidInput(f"application must be one of {APPLICATIONS}, got {application!r}")
    if application == "itr" and data.Y is None:
        raise InvalidInput("application 'itr' needs the Y column")
    if application == "missing_labels" and data.R is None:
        raise InvalidInput("application 'missing_labels' needs the R column")


def algorithm2_parts(data: Dataset, application: str, loss: PiecewiseLinearLoss, config: InferenceConfig,
                     targets: Sequence[int], nuisance: NuisanceConfig | None = None,
                     stream: RngStream | None = None) -> tuple[list[ScoreParts], list[ScoreParts]]:
    """Per-half score parts ``(parts on half 0, parts on half 1)``.

    Each half is evaluated with weights built from nuisance models fitted on the
    other half.
    """
    _check_application(data, application)
    nuisance = nuisance or NuisanceConfig()
    if data.n // 2 < nuisance.min_half:
        raise HalfTooSmall(f"half size {data.n // 2} is below the minimum {nuisance.min_half}")
    stream = stream if stream is not None else RngStream(config.seed)
    halves = make_fold_plan(data.n, 2, stream.child(3))
    out = []
    for h in (0, 1):
        evaluate = data.subset(halves.members(h))
        train = data.subset(halves.members(1 - h))
        w = cross_fitted_weights(train, evaluate, application, nuisance)
        out.append(score_parts(evaluate.with_weights(w), loss, config, targets, stream.child(4).child(h)))
    return out[0], out[1]


def run_algorithm2(data: Dataset, application: str, loss: PiecewiseLinearLoss,
                   config: InferenceConfig | None = None, targets: Sequence[int] | None = None,
                   alpha: float | None = None, nuisance: NuisanceConfig | None = None,
                   stream: RngStream | None = None, require_ci: bool = True) -> list[CoordinateInference]:
    """Two-half cross-fitted tests and intervals.

    Score, variance, ``beta_bar`` and information are averaged over the halves;
    the p-value and interval use the full sample size.
    """
    config = config or InferenceConfig()
    alpha = config.alpha if alpha is None else alpha
    targets = list(range(data.p)) if targets is None else list(targets)
    first, second = algorithm2_parts(data, application, loss, config, targets, nuisance, stream)
    return [
        assemble(ScoreParts.average([a, b]), data.n, alpha, config.info_floor, require_ci)
        for a, b in zip(first, second)
    ]

