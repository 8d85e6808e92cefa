import json
import math

import numpy as np
import pytest
from click.testing import CliRunner
from scipy.special import ndtri

from kdscore.cli import main, read_table, records_from_table
from kdscore.stats_util import RngStream

FAST = dict(n_lambda=8, n_mu=8, cv_folds=3)


def write_csv(path, X, A, extra=None):
    cols = [f"x{j + 1}" for j in range(X.shape[1])]
    head = ["A"] + list(extra or {}) + cols
    lines = [",".join(head)]
    for i in range(X.shape[0]):
        vals = [repr(float(A[i]))] + [repr(float(v[i])) for v in (extra or {}).values()] + [repr(float(x)) for x in X[i]]
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture
def dataset(tmp_path):
    rng = RngStream(3).generator()
    X = rng.standard_normal((90, 5))
    A = np.where(X[:, 0] - X[:, 1] + 0.5 * rng.standard_normal(90) > 0, 1, -1)
    return write_csv(tmp_path / "data.csv", X, A)


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(FAST))
    return str(path)


def run(*args, env=None):
    return CliRunner().invoke(main, [str(a) for a in args], env=env, catch_exceptions=False)


def test_missing_label_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,x2\n1,2\n3,4\n")
    res = run("test", str(path))
    assert res.exit_code == 2
    assert "missing required column 'A'" in res.output


def test_malformed_row_reports_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("A,x1\n1,0.5\n-1,oops\n")
    res = run("test", str(path))
    assert res.exit_code == 2 and "bad.csv:3:" in res.output


def test_same_seed_gives_identical_files(tmp_path, dataset, config):
    outs = []
    for k in range(2):
        out = tmp_path / f"out{k}.csv"
        assert run("test", dataset, "--config", config, "--seed", 7, "--output", out).exit_code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0].startswith(b"#schema=kdscore/1\n")


def test_interval_width_formula(tmp_path, dataset, config):
    out = tmp_path / "t.csv"
    assert run("test", dataset, "--config", config, "--targets", "1,2", "--alpha", 0.05, "-o", out).exit_code == 0
    meta, rows = read_table(out.read_text())
    assert len(rows) == 2 and [r["index"] for r in rows] == [1, 2]
    n = meta["n"]
    z975 = float(ndtri(0.975))  # 1.959964 to the printed digits
    assert abs(z975 - 1.959964) < 1e-6
    for r in rows:
        width = r["ci_high"] - r["ci_low"]
        assert width == pytest.approx(2 * z975 * r["sigma_hat"] / (math.sqrt(n) * r["info_hat"]), abs=1e-9)
        assert r["p_value"] == pytest.approx(math.erfc(r["z"] / math.sqrt(2)), abs=1e-12)


def test_round_trip_records(tmp_path, dataset, config):
    out = tmp_path / "t.csv"
    run("test", dataset, "--config", config, "--targets", "1,3,5", "-o", out)
    text = out.read_text()
    meta, rows = read_table(text)
    recs = records_from_table(meta, rows)
    assert [r.l for r in recs] == [0, 2, 4]
    from kdscore.cli import TEST_COLUMNS, write_table

    again = write_table(None, meta, list(TEST_COLUMNS),
                        [[row[c] for c in TEST_COLUMNS] for row in rows])
    assert again == text


def test_bh_column(tmp_path, dataset, config):
    out = tmp_path / "t.csv"
    assert run("test", dataset, "--config", config, "--bh-q", 0.1, "-o", out).exit_code == 0
    meta, rows = read_table(out.read_text())
    assert meta["bh_q"] == 0.1 and rows[0]["bh_reject"] is True


def test_seed_env_fallback(tmp_path, dataset, config):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("test", dataset, "--config", config, "--targets", "1", "-o", a, env={"KDSCORE_SEED": "11"})
    run("test", dataset, "--config", config, "--targets", "1", "--seed", 11, "-o", b)
    assert a.read_bytes() == b.read_bytes()
    assert read_table(a.read_text())[0]["seed"] == 11


def test_unknown_config_key(tmp_path, dataset):
    path = tmp_path / "cfg.yaml"
    path.write_text("n_lambda: 5\nbandwith: 0.3\n")
    res = run("test", dataset, "--config", path)
    assert res.exit_code == 2 and "bandwith" in res.output


def test_degenerate_input_exit_code(tmp_path):
    rng = RngStream(4).generator()
    X = rng.standard_normal((40, 3))
    X[:, 2] = 0.0  # a covariate with no variation has zero score variance
    A = np.where(X[:, 0] > 0, 1, -1)
    path = write_csv(tmp_path / "d.csv", X, A)
    res = run("test", path, "--targets", "3", "--seed", 1)
    assert res.exit_code == 3


def test_fit_huge_lambda_gives_zero(tmp_path, dataset):
    out = tmp_path / "f.csv"
    assert run("fit", dataset, "--lambda", 1e6, "-o", out).exit_code == 0
    meta, rows = read_table(out.read_text())
    assert all(r["beta"] == 0 for r in rows) and meta["nonzero"] == 0


def test_fit_reports_kkt(tmp_path, dataset, config):
    out = tmp_path / "f.csv"
    assert run("fit", dataset, "--config", config, "-o", out).exit_code == 0
    meta, rows = read_table(out.read_text())
    assert len(rows) == 5 and meta["lambda"] > 0
    if meta["converged"]:
        assert meta["kkt_residual"] <= 1e-4


def test_fit_determinism(tmp_path, dataset, config):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("fit", dataset, "--config", config, "--seed", 3, "-o", a)
    run("fit", dataset, "--config", config, "--seed", 3, "-o", b)
    assert a.read_bytes() == b.read_bytes()


def test_simulate_invalid_replicates():
    assert run("simulate", "--scenario", "I", "--replicates", 0).exit_code == 2


def test_simulate_jobs_invariance(tmp_path, config):
    outs = []
    for jobs in (1, 2, 1):
        out, dec = tmp_path / f"s{jobs}.csv", tmp_path / f"d{jobs}.csv"
        res = run("simulate", "--config", config, "--scenario", "I", "--n", 80, "--p", 10, "--replicates", 3,
                  "--truth", ",".join(["0.5"] * 4 + ["0"] * 6), "--seed", 5, "--jobs", jobs, "-o", out,
                  "--decisions", dec)
        assert res.exit_code == 0, res.output
        outs.append((out.read_bytes(), dec.read_bytes()))
    assert outs[0] == outs[1] == outs[2]
    meta, rows = read_table(outs[0][0].decode())
    assert len(rows) == 8 and meta["skip_count"] == 0
    dmeta, drows = read_table(outs[0][1].decode())
    assert len(drows) == 3


def test_simulate_truth_length_checked(config):
    res = run("simulate", "--config", config, "--n", 80, "--p", 10, "--replicates", 1, "--truth", "0,1")
    assert res.exit_code == 2


def test_itr_application(tmp_path, config):
    rng = RngStream(6).generator()
    X = rng.standard_normal((120, 4))
    A = np.where(rng.random(120) < 0.5, 1, -1)
    Y = 3.0 + X[:, 0] * (A == 1) + 0.5 * rng.standard_normal(120)
    path = write_csv(tmp_path / "itr.csv", X, A, {"Y": Y})
    out = tmp_path / "o.csv"
    res = run("test", path, "--config", config, "--application", "itr", "--targets", "1,2", "-o", out)
    assert res.exit_code == 0, res.output
    meta, rows = read_table(out.read_text())
    assert len(rows) == 2 and meta["application"] == "itr"


def test_missing_labels_allow_empty_a(tmp_path, config):
    rng = RngStream(7).generator()
    n = 100
    X = rng.standard_normal((n, 3))
    A = np.where(X[:, 0] > 0, 1, -1)
    R = (rng.random(n) < 0.7).astype(int)
    lines = ["A,R,x1,x2,x3"]
    for i in range(n):
        a = str(A[i]) if R[i] else ""
        lines.append(",".join([a, str(R[i])] + [repr(float(v)) for v in X[i]]))
    path = tmp_path / "ml.csv"
    path.write_text("\n".join(lines) + "\n")
    res = run("test", path, "--config", config, "--application", "missing_labels", "--targets", "1")
    assert res.exit_code == 0, res.output
    assert res.output.startswith("#schema=kdscore/1")
