import math

import numpy as np
import pytest

from kdscore.errors import InvalidInput
from kdscore.inference import InferenceConfig
from kdscore.loss_kernel import hinge
from kdscore.simulation import (
    MetricsReport,
    ReplicateRecord,
    ScenarioConfig,
    adhoc_baseline,
    compute_truth,
    run_experiment,
    scenario2_propensity,
    simulate,
    simulate_scenario1,
    simulate_scenario2,
)
from kdscore.simulation import _truth_fit  # noqa: PLC2701
from kdscore.stats_util import RngStream

BIG = 100_000


def test_group_fraction_and_label_balance():
    data = simulate_scenario1(BIG, 4, 0.4, 3)
    frac = np.mean(data.A == 1)
    assert abs(frac - 0.4) <= 0.005
    assert abs(frac - 0.4) <= 3 * math.sqrt(0.24 / BIG)


def test_group_covariances():
    data = simulate_scenario1(BIG, 4, 0.0, 4)
    g1, g2 = data.X[data.A == 1], data.X[data.A == -1]
    assert np.var(g1[:, 0]) == pytest.approx(0.9, abs=0.015)
    assert np.var(g2[:, 0]) == pytest.approx(1.0, abs=0.015)
    assert np.var(g1[:, 1]) == pytest.approx(1.0, abs=0.015)


def test_zero_separation_shares_means():
    data = simulate_scenario1(BIG, 6, 0.0, 5)
    for g in (data.X[data.A == 1], data.X[data.A == -1]):
        assert np.all(np.abs(g.mean(0)) < 0.02)


def test_group_means_scale_with_xi():
    data = simulate_scenario1(BIG, 5, 0.8, 6)
    np.testing.assert_allclose(data.X[data.A == 1].mean(0), 0.8 * np.array([-1, 1, -0.5, 0.5, 0]), atol=0.02)
    np.testing.assert_allclose(data.X[data.A == -1].mean(0), 0.8 * np.array([1, -1, -1, -1, 0]), atol=0.02)


def test_scenario2_propensity():
    X = np.zeros((1, 4))
    assert scenario2_propensity(X)[0] == 0.0
    t = np.linspace(0, 4, 50)
    ray = np.zeros((50, 4))
    ray[:, 0] = ray[:, 1] = t
    prop = scenario2_propensity(ray)
    assert np.all(np.diff(prop) > 0) and np.all((prop >= 0) & (prop < 1))
    data = simulate_scenario2(2000, 8, 0.5, 1)
    assert np.all(np.isin(data.A, (-1.0, 1.0))) and data.Y is not None


def test_scenario2_effect_and_noise():
    data, group1 = simulate_scenario2(BIG, 4, 0.4, 7, return_groups=True)
    from kdscore.simulation import GAMMA, scenario2_effect

    C = scenario2_effect(np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]]), np.array([True, False]))
    assert C.tolist() == [1.5, -1.5]
    eps = data.Y - (data.X @ np.array(GAMMA)) ** 2 - scenario2_effect(data.X, group1) * (data.A == 1)
    assert abs(eps.mean()) <= 3 / math.sqrt(BIG)
    assert abs(eps.var() - 1.0) <= 3 * math.sqrt(2 / BIG)


def test_generator_determinism():
    cfg = ScenarioConfig("II", 50, 10, 0.3, seed=9)
    a, b = simulate(cfg, 2), simulate(cfg, 2)
    assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y) and np.array_equal(a.A, b.A)
    assert not np.array_equal(simulate(cfg, 3).X, a.X)


@pytest.mark.parametrize("kw", [dict(p=7), dict(replicates=0), dict(xi=-1.0), dict(scenario="III")])
def test_config_validation(kw):
    base = dict(scenario="I", n=50, p=10, xi=0.4)
    with pytest.raises(InvalidInput):
        ScenarioConfig(**{**base, **kw})


def test_presets():
    cfg = ScenarioConfig.preset("I", "desk", 0.4)
    assert (cfg.n, cfg.p, cfg.replicates) == (500, 200, 200)
    assert ScenarioConfig.preset("I", "paper", 0.4).p == 800


QUICK = InferenceConfig(n_lambda=10, n_mu=10, cv_folds=3)


def test_truth_thresholding():
    cfg = ScenarioConfig("I", 60, 8, 0.8, seed=1)
    assert np.all(compute_truth(cfg, n_truth=200, replicates_truth=2, zero_tol=math.inf, inference=QUICK) == 0)
    single = compute_truth(cfg, n_truth=200, replicates_truth=1, inference=QUICK)
    beta = _truth_fit((cfg, hinge(), 0, 200, QUICK, None))
    np.testing.assert_array_equal(single, np.where(np.abs(beta) < 0.01, 0.0, beta))


def fake_report(P, truth, lo=None, hi=None, alpha=0.05):
    P = np.asarray(P, dtype=float)
    lo = np.zeros_like(P) if lo is None else lo
    hi = np.ones_like(P) if hi is None else hi
    recs = [ReplicateRecord(i, tuple(row), tuple(row), tuple(a), tuple(b), None if np.all(np.isfinite(row)) else "x")
            for i, (row, a, b) in enumerate(zip(P, lo, hi))]
    cfg = ScenarioConfig("I", 50, 8, 0.4, replicates=len(recs))
    return MetricsReport.from_records(cfg, "proposed", alpha, range(P.shape[1]), truth, recs)


def test_report_partition_by_truth():
    P = np.full((3, 8), 0.5)
    rep = fake_report(P, np.ones(8))
    assert rep.type_one_error == {} and sorted(rep.power) == list(range(8))
    rep = fake_report(P, np.r_[np.ones(4), np.zeros(4)])
    assert sorted(rep.type_one_error) == [4, 5, 6, 7]


def test_report_recomputable_from_decisions():
    rng = np.random.default_rng(0)
    P = rng.random((20, 8))
    P[3] = np.nan
    rep = fake_report(P, np.r_[np.ones(4), np.zeros(4)])
    assert rep.skip_count == 1
    ok = rep.decisions[rep.decisions[:, 0] >= 0]
    np.testing.assert_array_equal(rep.rejection_rates, ok.mean(0))
    np.testing.assert_array_equal(rep.decisions[3], -1)
    assert np.all((rep.rejection_rates >= 0) & (rep.rejection_rates <= 1))


def test_report_coverage_and_length():
    P = np.full((4, 8), 0.5)
    lo = np.tile(np.arange(8) * 0.1, (4, 1))
    hi = lo + 0.5
    hi[0] = np.nan  # interval unavailable in one replicate
    truth = np.full(8, 0.3)
    rep = fake_report(P, truth, lo, hi)
    expected = ((lo[1:] <= 0.3) & (0.3 <= hi[1:])).mean(0)
    np.testing.assert_allclose(rep.coverage_by_target, expected)
    np.testing.assert_allclose(rep.ci_length_by_target, 0.5)
    assert rep.ci_unavailable.tolist() == [1] * 8


@pytest.fixture(scope="module")
def tiny_experiment():
    cfg = ScenarioConfig("I", 80, 10, 0.8, replicates=3, seed=2)
    return cfg, run_experiment(cfg, hinge(), QUICK, np.zeros(10), alpha=1.0)


def test_alpha_one_rejects_everything(tiny_experiment):
    _, rep = tiny_experiment
    assert rep.skip_count == 0
    np.testing.assert_array_equal(rep.rejection_rates, 1.0)


def test_experiment_jobs_invariance(tiny_experiment):
    cfg, rep = tiny_experiment
    again = run_experiment(cfg, hinge(), QUICK, np.zeros(10), alpha=1.0, jobs=2)
    for name in ("decisions", "p_values", "estimates", "ci_low", "ci_high"):
        assert np.array_equal(getattr(again, name), getattr(rep, name), equal_nan=True), name
    assert again.errors == rep.errors


def test_experiment_validation():
    cfg = ScenarioConfig("II", 80, 10, 0.8)
    with pytest.raises(InvalidInput):
        run_experiment(cfg, hinge(), QUICK, np.zeros(5))
    with pytest.raises(InvalidInput):
        run_experiment(cfg, hinge(), QUICK, method="adhoc")


def test_adhoc_baseline_runs():
    data = simulate_scenario1(300, 10, 0.8, RngStream(4))
    rows = adhoc_baseline(data, hinge(), QUICK, range(8), 0.05)
    assert len(rows) == 8
    for r in rows:
        assert 0 <= r["p_value"] <= 1 and r["ci_low"] <= r["estimate"] <= r["ci_high"]
    assert rows[0]["p_value"] < 0.01
