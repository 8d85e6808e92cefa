"""``kdscore`` command line: ``fit``, ``test`` and ``simulate``.

Every command reads an optional YAML/JSON config (unknown keys are rejected);
command-line flags override config values. Output files are CSV with a
``#schema=kdscore/1`` first line, ``#key=value`` metadata lines, then a header
and rows. Floats are written with ``repr`` so they parse back exactly.

Coordinates are 1-based on the command line and in output files.
"""

from __future__ import annotations

import csv
import io
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Literal

import click
import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .dataset import Dataset
from .errors import DegeneracyError, InvalidInput, KdscoreError, NonConvergenceWarning
from .inference import CoordinateInference, InferenceConfig, test_all_coordinates
from .loss_kernel import BandwidthConfig, PiecewiseLinearLoss, hinge
from .nuisance import NuisanceConfig, run_algorithm2
from .simulation import PRESETS, MetricsReport, ScenarioConfig, compute_truth, run_experiment
from .solver import SolverOptions, fit_erm_cv, fit_penalized_erm
from .stats_util import RngStream, bh_fdr

SCHEMA = "kdscore/1"
RESERVED = ("A", "Y", "R")
SEED_ENV = "KDSCORE_SEED"

EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE = 0, 2, 3


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


class LossSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    knots: list[float] = [1.0]
    base_slope: float = -1.0
    jumps: list[float] = [1.0]
    anchor: tuple[float, float] | None = (1.0, 0.0)

    def build(self) -> PiecewiseLinearLoss:
        return PiecewiseLinearLoss.from_record(self.model_dump())


class RunConfig(BaseModel):
    """All settings, with defaults; each command reads the fields it needs."""

    model_config = ConfigDict(extra="forbid")

    loss: LossSpec = Field(default_factory=LossSpec)
    seed: int | None = Field(default=None, ge=0)
    # inference
    K: int = Field(default=2, ge=2)
    h_lo: float | None = Field(default=None, gt=0)
    h_gb: float | None = Field(default=None, gt=0)
    lambda_grid: list[float] | None = None
    n_lambda: int = Field(default=50, ge=1)
    lambda_ratio: float = Field(default=0.01, gt=0, le=1)
    mu_grid: list[float] | None = None
    n_mu: int = Field(default=50, ge=1)
    mu_ratio: float = Field(default=0.01, gt=0, le=1)
    cv_folds: int = Field(default=5, ge=2)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    targets: list[int] | None = None
    application: Literal["classification", "missing_labels", "itr"] = "classification"
    weight_mode: Literal["floored", "unweighted"] = "floored"
    info_floor: float = Field(default=1e-8, ge=0)
    bh_q: float | None = Field(default=None, gt=0, lt=1)
    # solver
    opt_tol: float = Field(default=1e-8, gt=0)
    kkt_tol: float = Field(default=1e-4, gt=0)
    max_iter: int = Field(default=10_000, ge=1)
    # fit
    lam: float | None = Field(default=None, gt=0)
    # nuisance
    screen_k: int = Field(default=20, ge=1)
    clip: tuple[float, float] = (0.05, 0.95)
    # simulate
    scenario: Literal["I", "II"] = "I"
    preset: Literal["desk", "paper"] | None = "desk"
    n: int | None = Field(default=None, ge=4)
    p: int | None = Field(default=None, ge=8)
    xi: float | None = Field(default=None, ge=0)
    replicates: int | None = Field(default=None, ge=1)
    method: Literal["proposed", "adhoc"] = "proposed"
    truth: list[float] | None = None
    n_truth: int = Field(default=2500, ge=4)
    truth_replicates: int = Field(default=50, ge=1)
    zero_tol: float = Field(default=0.01, ge=0)
    propensity_form: Literal["ratio", "logistic"] = "ratio"
    jobs: int = Field(default=1, ge=1)

    @field_validator("lambda_grid", "mu_grid")
    @classmethod
    def _positive_grid(cls, v):
        if v is not None and (len(v) == 0 or any(not g > 0 for g in v)):
            raise ValueError("grids must be non-empty lists of positive numbers")
        return v

    @field_validator("targets")
    @classmethod
    def _one_based(cls, v):
        if v is not None and any(t < 1 for t in v):
            raise ValueError("targets are 1-based covariate positions")
        return v

    def inference(self, seed: int) -> InferenceConfig:
        return InferenceConfig(
            K=self.K,
            bandwidths=BandwidthConfig(self.h_lo, self.h_gb),
            lambda_grid=None if self.lambda_grid is None else tuple(self.lambda_grid),
            n_lambda=self.n_lambda,
            lambda_ratio=self.lambda_ratio,
            mu_grid=None if self.mu_grid is None else tuple(self.mu_grid),
            n_mu=self.n_mu,
            mu_ratio=self.mu_ratio,
            cv_folds=self.cv_folds,
            seed=seed,
            alpha=self.alpha,
            info_floor=self.info_floor,
            weight_mode=self.weight_mode,
            solver=SolverOptions(opt_tol=self.opt_tol, kkt_tol=self.kkt_tol, max_iter=self.max_iter),
        )

    def nuisance(self) -> NuisanceConfig:
        return NuisanceConfig(screen_k=self.screen_k, clip=self.clip)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InvalidInput(f"cannot read config {path}: {exc}") from exc
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise InvalidInput(f"config {path} is not valid YAML/JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise InvalidInput(f"config {path} must be a mapping")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**raw)
    except ValidationError as exc:
        raise InvalidInput(f"invalid config: {exc}") from exc


def resolve_seed(flag: int | None, config: RunConfig) -> int:
    """``--seed``, then the config, then ``$KDSCORE_SEED``, then 0."""
    if flag is not None:
        return int(flag)
    if config.seed is not None:
        return int(config.seed)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise InvalidInput(f"{SEED_ENV} must be a non-negative integer, got {env!r}") from None
        if seed < 0:
            raise InvalidInput(f"{SEED_ENV} must be a non-negative integer, got {env!r}")
        return seed
    return 0


# ---------------------------------------------------------------------------
# Input / output
# ---------------------------------------------------------------------------


def read_dataset(path: str, application: str = "classification") -> Dataset:
    """Parse a CSV with reserved columns ``A``, ``Y``, ``R``; the rest are covariates."""
    try:
        handle = open(path, newline="")
    except OSError as exc:
        raise InvalidInput(f"cannot read {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidInput(f"{path}: empty file") from None
        if "A" not in header:
            raise InvalidInput(f"{path}: missing required column 'A'")
        if len(set(header)) != len(header):
            raise InvalidInput(f"{path}: duplicate column names")
        if application == "itr" and "Y" not in header:
            raise InvalidInput(f"{path}: application 'itr' needs column 'Y'")
        if application == "missing_labels" and "R" not in header:
            raise InvalidInput(f"{path}: application 'missing_labels' needs column 'R'")
        cov = [i for i, h in enumerate(header) if h not in RESERVED]
        if not cov:
            raise InvalidInput(f"{path}: no covariate columns")
        r_col = header.index("R") if "R" in header else None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InvalidInput(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            unlabelled = r_col is not None and row[r_col].strip() in ("0", "0.0")
            vals = []
            for j, cell in enumerate(row):
                cell = cell.strip()
                if cell == "" and header[j] == "A" and unlabelled:
                    vals.append(0.0)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise InvalidInput(f"{path}:{lineno}: column {header[j]!r} is not numeric: {cell!r}") from None
                if not math.isfinite(v) and not (header[j] == "A" and unlabelled):
                    raise InvalidInput(f"{path}:{lineno}: column {header[j]!r} is not finite")
                vals.append(v)
            a = vals[header.index("A")]
            if not unlabelled and a not in (-1.0, 1.0):
                raise InvalidInput(f"{path}:{lineno}: label A must be -1 or 1, got {a!r}")
            rows.append(vals)
    if len(rows) < 2:
        raise InvalidInput(f"{path}: need at least 2 data rows")
    M = np.array(rows, dtype=float)
    col = {h: M[:, i] for i, h in enumerate(header)}
    A = np.nan_to_num(col["A"], nan=0.0)
    return Dataset(
        X=M[:, cov], A=A, Y=col.get("Y"), R=col.get("R"), names=tuple(header[i] for i in cov)
    )


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse(v: str):
    if v in ("true", "false"):
        return v == "true"
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def write_table(path: str | None, meta: dict, header: list[str], rows: list[list]) -> str:
    """Render (and optionally write) a schema-versioned table; returns the text."""
    buf = io.StringIO()
    buf.write(f"#schema={SCHEMA}\n")
    for k, v in meta.items():
        buf.write(f"#{k}={_fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_table(path_or_text: str) -> tuple[dict, list[dict]]:
    """Parse a file written by :func:`write_table` into ``(meta, rows)``."""
    text = Path(path_or_text).read_text() if "\n" not in path_or_text else path_or_text
    lines = text.splitlines()
    if not lines or lines[0] != f"#schema={SCHEMA}":
        raise InvalidInput(f"not a {SCHEMA} file")
    meta = {}
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        k, _, v = lines[i][1:].partition("=")
        meta[k] = _parse(v)
        i += 1
    reader = csv.reader(lines[i:])
    header = next(reader)
    rows = [{h: _parse(c) for h, c in zip(header, r)} for r in reader]
    return meta, rows


TEST_COLUMNS = ["name", "index", "beta_bar", "beta_tilde", "score", "sigma_hat", "info_hat", "z", "p_value",
                "ci_low", "ci_high", "score_unrestricted"]


def records_from_table(meta: dict, rows: list[dict]) -> list[CoordinateInference]:
    """Rebuild :class:`CoordinateInference` records from a ``test`` output file."""
    out = []
    for r in rows:
        out.append(CoordinateInference(
            l=int(r["index"]) - 1, score=float(r["score"]), sigma_hat=float(r["sigma_hat"]),
            info_hat=float(r["info_hat"]), beta_bar=float(r["beta_bar"]), beta_tilde=float(r["beta_tilde"]),
            z=float(r["z"]), p_value=float(r["p_value"]), ci_low=float(r["ci_low"]), ci_high=float(r["ci_high"]),
            alpha=float(meta["alpha"]), n=int(meta["n"]), score_unrestricted=float(r["score_unrestricted"]),
        ))
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _run(fn):
    """Map package errors to exit codes."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonConvergenceWarning)
            fn()
    except DegeneracyError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_DEGENERATE)
    except (InvalidInput, KdscoreError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_INVALID)


def _targets(spec: str | None) -> list[int] | None:
    if spec is None:
        return None
    try:
        return [int(t) for t in spec.split(",") if t.strip()]
    except ValueError:
        raise InvalidInput(f"--targets must be comma-separated integers, got {spec!r}") from None


def _emit(text: str, output: str | None):
    if output is None:
        click.echo(text, nl=False)


@click.group()
@click.version_option(package_name="artifact")
def main():
    """Inference for sparse linear decision rules with piecewise-linear losses."""


_config_opt = click.option("--config", "config_path", type=click.Path(), default=None,
                           help="YAML or JSON config file.")
_seed_opt = click.option("--seed", type=int, default=None, help=f"Random seed (fallback: ${SEED_ENV}, then 0).")
_output_opt = click.option("--output", "-o", type=click.Path(), default=None, help="Output file (default stdout).")


@main.command()
@click.argument("input_csv", type=click.Path())
@_config_opt
@_seed_opt
@click.option("--lambda", "lam", type=float, default=None, help="Fixed penalty (default: cross-validated).")
@click.option("--application", type=click.Choice(["classification", "missing_labels", "itr"]), default=None)
@_output_opt
def fit(input_csv, config_path, seed, lam, application, output):
    """Fit the L1-penalised surrogate-loss rule and write its coefficients."""

    def body():
        cfg = load_config(config_path, dict(lam=lam, application=application))
        s = resolve_seed(seed, cfg)
        data = read_dataset(input_csv, cfg.application)
        loss = cfg.loss.build()
        inf = cfg.inference(s)
        if cfg.application != "classification":
            from .nuisance import cross_fitted_weights
            from .folds import make_fold_plan

            halves = make_fold_plan(data.n, 2, RngStream(s).child(3))
            wp, wm = np.empty(data.n), np.empty(data.n)
            for h in (0, 1):
                idx = halves.members(h)
                w = cross_fitted_weights(data.subset(halves.members(1 - h)), data.subset(idx), cfg.application,
                                         cfg.nuisance())
                wp[idx], wm[idx] = w.w_plus, w.w_minus
            data = data.with_weights((wp, wm))
        if cfg.lam is not None:
            res = fit_penalized_erm(data, loss, cfg.lam, inf.solver)
        else:
            res = fit_erm_cv(data, loss, grid=inf.lambda_grid, folds=inf.cv_folds, seed=RngStream(s),
                             n_lambda=inf.n_lambda, lambda_ratio=inf.lambda_ratio, options=inf.solver)
        meta = dict(kind="fit", n=data.n, p=data.p, seed=s, application=cfg.application, **{"lambda": res.lam},
                    objective=res.objective, kkt_residual=res.kkt_residual, converged=res.converged,
                    iterations=res.iterations, nonzero=res.nonzero)
        rows = [[name, b] for name, b in zip(data.covariate_names, res.beta)]
        _emit(write_table(output, meta, ["name", "beta"], rows), output)

    _run(body)


@main.command()
@click.argument("input_csv", type=click.Path())
@_config_opt
@_seed_opt
@click.option("--targets", default=None, help="Comma-separated 1-based covariate positions (default: all).")
@click.option("--alpha", type=float, default=None, help="Interval level is 1 - alpha (default 0.05).")
@click.option("--application", type=click.Choice(["classification", "missing_labels", "itr"]), default=None)
@click.option("--bh-q", "bh_q", type=float, default=None, help="Add a Benjamini-Hochberg rejection column at q.")
@_output_opt
def test(input_csv, config_path, seed, targets, alpha, application, bh_q, output):
    """Score tests and debiased confidence intervals for selected coordinates."""

    def body():
        cfg = load_config(config_path, dict(targets=_targets(targets), alpha=alpha, application=application,
                                             bh_q=bh_q))
        s = resolve_seed(seed, cfg)
        data = read_dataset(input_csv, cfg.application)
        tg = list(range(1, data.p + 1)) if cfg.targets is None else cfg.targets
        if any(t > data.p for t in tg):
            raise InvalidInput(f"targets must lie in 1..{data.p}")
        zero_based = [t - 1 for t in tg]
        loss = cfg.loss.build()
        inf = cfg.inference(s)
        if cfg.application == "classification":
            if data.R is not None:
                raise InvalidInput("column R present: use --application missing_labels")
            recs = test_all_coordinates(data, loss, inf, zero_based, cfg.alpha)
        else:
            recs = run_algorithm2(data, cfg.application, loss, inf, zero_based, cfg.alpha, cfg.nuisance(),
                                  RngStream(s))
        names = data.covariate_names
        header = list(TEST_COLUMNS)
        rejected = None
        if cfg.bh_q is not None:
            header.append("bh_reject")
            rejected = bh_fdr([r.p_value for r in recs], cfg.bh_q)
        rows = []
        for i, r in enumerate(recs):
            row = [names[r.l], r.l + 1, r.beta_bar, r.beta_tilde, r.score, r.sigma_hat, r.info_hat, r.z,
                   r.p_value, r.ci_low, r.ci_high, r.score_unrestricted]
            if rejected is not None:
                row.append(i in rejected)
            rows.append(row)
        meta = dict(kind="test", n=data.n, p=data.p, seed=s, alpha=cfg.alpha, application=cfg.application, K=cfg.K)
        if cfg.bh_q is not None:
            meta["bh_q"] = cfg.bh_q
        _emit(write_table(output, meta, header, rows), output)

    _run(body)


def _scenario(cfg: RunConfig, seed: int) -> ScenarioConfig:
    base = dict(PRESETS[cfg.preset]) if cfg.preset else {}
    for key in ("n", "p", "replicates"):
        if getattr(cfg, key) is not None:
            base[key] = getattr(cfg, key)
    missing = [k for k in ("n", "p", "replicates") if k not in base]
    if missing:
        raise InvalidInput(f"without a preset, set {', '.join(missing)}")
    xi = cfg.xi if cfg.xi is not None else (0.4 if cfg.scenario == "I" else 0.8)
    return ScenarioConfig(scenario=cfg.scenario, xi=xi, seed=seed, propensity_form=cfg.propensity_form, **base)


def metrics_tables(report: MetricsReport, seed: int) -> tuple[tuple[dict, list, list], tuple[dict, list, list]]:
    """``(summary table, per-replicate decision table)`` as ``(meta, header, rows)``."""
    c = report.config
    meta = dict(kind="metrics", scenario=c.scenario, n=c.n, p=c.p, xi=c.xi, replicates=report.replicates,
                seed=seed, method=report.method, alpha=report.alpha, skip_count=report.skip_count,
                coverage=report.coverage, mean_ci_length=report.mean_ci_length)
    rates, cov, length = report.rejection_rates, report.coverage_by_target, report.ci_length_by_target
    rows = []
    for j, t in enumerate(report.targets):
        truth = report.truth[t]
        rows.append([t + 1, truth, "null" if truth == 0 else "signal", rates[j], cov[j], length[j]])
    summary = (meta, ["coordinate", "truth", "role", "rejection_rate", "coverage", "mean_ci_length"], rows)
    errors = dict(report.errors)
    dheader = ["replicate"]
    for t in report.targets:
        dheader += [f"p_{t + 1}", f"reject_{t + 1}", f"estimate_{t + 1}", f"ci_low_{t + 1}", f"ci_high_{t + 1}"]
    dheader.append("error")
    drows = []
    for r in range(report.replicates):
        row = [r]
        for j in range(len(report.targets)):
            row += [report.p_values[r, j], int(report.decisions[r, j]), report.estimates[r, j],
                    report.ci_low[r, j], report.ci_high[r, j]]
        row.append(errors.get(r, ""))
        drows.append(row)
    dmeta = dict(kind="decisions", scenario=c.scenario, seed=seed, alpha=report.alpha)
    return summary, (dmeta, dheader, drows)


@main.command()
@_config_opt
@_seed_opt
@click.option("--scenario", type=click.Choice(["I", "II"]), default=None)
@click.option("--preset", type=click.Choice(sorted(PRESETS)), default=None)
@click.option("--n", type=int, default=None)
@click.option("--p", type=int, default=None)
@click.option("--xi", type=float, default=None)
@click.option("--replicates", type=int, default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--method", type=click.Choice(["proposed", "adhoc"]), default=None)
@click.option("--truth", "truth_spec", default=None, help="Comma-separated truth vector (skips truth computation).")
@click.option("--n-truth", type=int, default=None)
@click.option("--truth-replicates", type=int, default=None)
@click.option("--jobs", type=int, default=None, help="Worker processes (output does not depend on it).")
@_output_opt
@click.option("--decisions", "decisions_path", type=click.Path(), default=None,
              help="Also write the per-replicate decision table here.")
def simulate(config_path, seed, scenario, preset, n, p, xi, replicates, alpha, method, truth_spec, n_truth,
             truth_replicates, jobs, output, decisions_path):
    """Run a Monte-Carlo study and report type-I error, power, coverage and CI length."""

    def body():
        truth_list = None
        if truth_spec is not None:
            try:
                truth_list = [float(v) for v in truth_spec.split(",")]
            except ValueError:
                raise InvalidInput("--truth must be comma-separated numbers") from None
        cfg = load_config(config_path, dict(scenario=scenario, preset=preset, n=n, p=p, xi=xi,
                                             replicates=replicates, alpha=alpha, method=method, truth=truth_list,
                                             n_truth=n_truth, truth_replicates=truth_replicates, jobs=jobs))
        s = resolve_seed(seed, cfg)
        sc = _scenario(cfg, s)
        loss = cfg.loss.build()
        inf = cfg.inference(s)
        if cfg.truth is not None:
            truth = np.asarray(cfg.truth, dtype=float)
            if truth.size != sc.p:
                raise InvalidInput(f"--truth needs {sc.p} values, got {truth.size}")
        else:
            truth = compute_truth(sc, loss, cfg.n_truth, cfg.truth_replicates, cfg.zero_tol, inf, cfg.nuisance(),
                                  jobs=cfg.jobs)
        report = run_experiment(sc, loss, inf, truth, cfg.alpha, jobs=cfg.jobs, method=cfg.method,
                                nuisance=cfg.nuisance())
        summary, decisions = metrics_tables(report, s)
        text = write_table(output, *summary)
        if decisions_path is not None:
            write_table(decisions_path, *decisions)
        if output is None:
            click.echo(text, nl=False)
        else:
            meta = summary[0]
            click.echo(f"scenario {sc.scenario}  n={sc.n} p={sc.p} xi={sc.xi} replicates={report.replicates} "
                       f"skipped={report.skip_count}", err=True)
            for row in summary[2]:
                click.echo(f"  X{row[0]:<4} truth={row[1]: .4f} {row[2]:<6} reject={row[3]:.3f} "
                           f"coverage={row[4]:.3f} length={row[5]:.4f}", err=True)
            click.echo(f"  coverage={meta['coverage']:.3f} mean CI length={meta['mean_ci_length']:.4f} "
                       f"runtime={report.runtime:.1f}s", err=True)

    _run(body)


if __name__ == "__main__":  # pragma: no cover
    main()
