import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirrorfdr import cli, harness
from mirrorfdr.datagen import BetaScheme, BetaSpec, ConfigError, CovarianceSpec, CovFamily, Dataset, make_dataset
from mirrorfdr.fdrctl import randms_select

TINY = {
    "schema_version": 1,
    "base_seed": 3,
    "scenarios": [
        {
            "id": "tiny",
            "n": 60,
            "p": 80,
            "active": 5,
            "covariance": {"rho": 0.3, "block_size": 20},
            "betas": {"scheme": "fixed_pool"},
            "mds_splits": 2,
            "repetitions": 2,
            "sweep": {"rho": [0.0, 0.5]},
        }
    ],
}


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(doc if isinstance(doc, str) else json.dumps(doc, indent=1))
    return path


# ---- config ----------------------------------------------------------------------


def test_presets_expand_to_the_published_grids():
    rep = cli.load_config(cli._resolve_config("paper_replication"))
    sizes = [len(harness.scenario_grid(s.config, s.sweep)) for s in rep]
    assert sizes == [6, 5]
    rho = harness.scenario_grid(rep[0].config, rep[0].sweep)
    assert [c.covariance.rho for c in rho] == [0.0, 0.2, 0.4, 0.5, 0.6, 0.8]
    assert all(c.n == 800 and c.p == 2000 and c.p1 == 50 and c.repetitions == 50 for c in rho)
    sig = cli.load_config(cli._resolve_config("appendix_sigma"))
    assert sig[0].kind == "sigma_sensitivity" and sig[0].config.repetitions == 20
    for name in ("new_scenarios", "appendix_screening"):
        assert cli.load_config(cli._resolve_config(name))


def test_malformed_json_reports_line(tmp_path, capsys):
    path = _write(tmp_path, '{\n "schema_version": 1,\n "scenarios": [\n}')
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) != 0
    err = capsys.readouterr().err
    assert f"{path}:4:" in err


def test_unknown_key_reports_field_path(tmp_path):
    doc = json.loads(json.dumps(TINY))
    doc["scenarios"][0]["covariance"]["rhoo"] = 0.2
    with pytest.raises(ConfigError, match=r"\$\.scenarios\[0\]\.covariance.*rhoo"):
        cli.load_config(_write(tmp_path, doc))


def test_bad_values_and_versions(tmp_path):
    for patch in ({"schema_version": 2}, {"extra": 1}):
        with pytest.raises(ConfigError):
            cli.load_config(_write(tmp_path, {**TINY, **patch}))
    doc = json.loads(json.dumps(TINY))
    doc["scenarios"][0]["q"] = 1.5
    with pytest.raises(ConfigError, match="q"):
        cli.load_config(_write(tmp_path, doc))
    doc = json.loads(json.dumps(TINY))
    doc["scenarios"][0]["sweep"] = {"bogus": [1]}
    with pytest.raises(ConfigError, match="bogus"):
        cli.load_config(_write(tmp_path, doc))


def test_empty_scenarios(tmp_path, capsys):
    path = _write(tmp_path, {"schema_version": 1, "scenarios": []})
    assert cli.main(["simulate", "--config", str(path), "--out", str(tmp_path / "o")]) != 0
    assert "no scenarios" in capsys.readouterr().err


# ---- simulate --------------------------------------------------------------------


def test_simulate_writes_records_and_summaries(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["simulate", "--config", str(_write(tmp_path, TINY)), "--out", str(out), "--threads", "1"]) == 0
    digest = capsys.readouterr().out.strip().splitlines()
    assert len(digest) == 2 and all("FDR" in line and "TPR" in line for line in digest)
    with open(out / "records.csv") as fh:
        header = fh.readline().strip()
    assert header == "scenario_id,method,rep,seed,fdp,tpr,n_selected,sigma2_used,tau,wall_time_s,peak_mem_bytes,status"
    recs = cli.read_records(out / "records.csv")
    assert len(recs) == 2 * 3 * 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["complete"] and len(summary["scenarios"]) == 2
    assert (out / "summary.csv").exists()


def test_simulate_output_independent_of_threads(tmp_path, monkeypatch):
    cfg = _write(tmp_path, TINY)
    cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a"), "--threads", "1"])
    monkeypatch.setenv(harness.THREADS_ENV, "2")
    cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b")])
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time_s"} for r in rows]
    assert strip(cli.read_records(tmp_path / "a" / "records.csv")) == strip(cli.read_records(tmp_path / "b" / "records.csv"))


def test_interrupt_keeps_partial_results(tmp_path, monkeypatch):
    doc = json.loads(json.dumps(TINY))
    calls = {"n": 0}
    real = harness.run_scenario

    def flaky(cfg, threads=None, progress=None):
        calls["n"] += 1
        if calls["n"] == 2:
            raise KeyboardInterrupt
        return real(cfg, threads)

    monkeypatch.setattr(harness, "run_scenario", flaky)
    out = tmp_path / "o"
    assert cli.cmd_simulate(str(_write(tmp_path, doc)), str(out), 1) == 130
    assert len(cli.read_records(out / "records.csv")) == 3 * 2
    assert json.loads((out / "summary.json").read_text())["complete"] is False


floats = st.floats(allow_nan=False, allow_infinity=False)


@given(vals=st.lists(st.tuples(floats, floats, st.integers(0, 2**63 - 1)), min_size=1, max_size=20))
def test_records_round_trip_exactly(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("rt") / "r.csv"
    recs = [
        harness.RunRecord("s", "RandMS", i, seed, fdp=a, tpr=b, tau=None if i % 2 else a, sigma2_used=b, wall_time_s=abs(a))
        for i, (a, b, seed) in enumerate(vals)
    ]
    cli.write_csv(path, [r.row() for r in recs], harness.RECORD_FIELDS)
    back = cli.read_records(path)
    for r, row in zip(recs, back):
        assert row["fdp"] == r.fdp and row["tpr"] == r.tpr and row["seed"] == r.seed
        assert row["tau"] == r.tau and row["sigma2_used"] == r.sigma2_used


# ---- analyze ------------------------------------------------------------------------


def _table(tmp_path, ds, outcome=None, name="data.csv"):
    y = ds.y if outcome is None else outcome
    path = tmp_path / name
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"f{j}" for j in range(ds.p)])
        for i in range(ds.n):
            w.writerow([repr(float(y[i]))] + [repr(float(v)) for v in ds.X[i]])
    return path


@pytest.fixture(scope="module")
def analysis_data():
    return make_dataset(120, 40, CovarianceSpec(CovFamily.TOEPLITZ_BLOCK, 0.3), BetaSpec(BetaScheme.FIXED_POOL, p1=4), 1.0, 21)


def test_analyze_round_trip(tmp_path, analysis_data):
    path = _table(tmp_path, analysis_data)
    rep = cli.cmd_analyze(cli.AnalysisRequest(str(path), "y", seed=5))
    direct = randms_select(Dataset(analysis_data.X, analysis_data.y), 0.1, 1.0, None, 5)
    assert sorted(e["index"] for e in rep["selected"]) == direct.selected.tolist()
    assert rep["n_screened"] == direct.screened.size and rep["n_selected"] == direct.selected.size
    assert rep["sigma2_used"] == direct.sigma2_used
    again = cli.cmd_analyze(cli.AnalysisRequest(str(path), "y", seed=5))
    assert again == rep


def test_analyze_multiplicative_report(tmp_path, analysis_data, capsys):
    y = np.exp(analysis_data.y / 4)
    path = _table(tmp_path, analysis_data, outcome=y)
    out = tmp_path / "rep.json"
    code = cli.main(["analyze", "--input", str(path), "--outcome-col", "y", "--log-outcome", "--multiplicative", "--out", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "screened" in text and "selected" in text
    rep = json.loads(out.read_text())
    e = rep["selected"][0]
    assert e["multiplicative"] == pytest.approx(math.exp(e["estimate"]))
    assert e["multiplicative_lower"] == pytest.approx(math.exp(e["ci_lower"]))
    assert f"x{e['multiplicative']:.2f} [{e['multiplicative_lower']:.2f}, {e['multiplicative_upper']:.2f}]" in text


def test_interval_format():
    assert cli._ci(0.8312, 0.7389, 0.9249) == "0.83 [0.74, 0.92]"


def test_analyze_feature_subset(tmp_path, analysis_data):
    path = _table(tmp_path, analysis_data)
    rep = cli.cmd_analyze(cli.AnalysisRequest(str(path), "y", features=["f0", "f1", "f2"]))
    assert rep["p"] == 3


def test_ingestion_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    rows = ["y,a,b"] + [f"{i},{i * 2},{i % 3}" for i in range(12)]
    rows[3] = "2,oops,1"
    bad.write_text("\n".join(rows))
    with pytest.raises(cli.IngestionError, match=r"line 4 column 'a': 'oops'"):
        cli.read_table(bad, "y")
    rows[3] = "2,,1"
    bad.write_text("\n".join(rows))
    with pytest.raises(cli.IngestionError, match=r"missing values at line 4 column 'a'"):
        cli.read_table(bad, "y")
    with pytest.raises(cli.IngestionError, match="not found"):
        cli.read_table(bad, "z")


def test_analyze_validation(tmp_path):
    const = tmp_path / "c.csv"
    const.write_text("\n".join(["y,a,b"] + [f"1,{i},{i % 3}" for i in range(12)]))
    with pytest.raises(ConfigError, match="constant"):
        cli.cmd_analyze(cli.AnalysisRequest(str(const), "y"))
    short = tmp_path / "s.csv"
    short.write_text("\n".join(["y,a"] + [f"{i},{i}" for i in range(5)]))
    with pytest.raises(cli.IngestionError, match="at least 10"):
        cli.cmd_analyze(cli.AnalysisRequest(str(short), "y"))
    neg = tmp_path / "n.csv"
    neg.write_text("\n".join(["y,a"] + [f"{i - 3},{i % 4}" for i in range(12)]))
    with pytest.raises(cli.IngestionError, match="positive"):
        cli.cmd_analyze(cli.AnalysisRequest(str(neg), "y", log_transform_outcome=True))
    with pytest.raises(ConfigError):
        cli.AnalysisRequest("x", "y", q=0)
    assert cli.main(["analyze", "--input", str(tmp_path / "missing.csv"), "--outcome-col", "y"]) == 2


# ---- benchmark ------------------------------------------------------------------------


def test_benchmark_command(tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert cli.main(["benchmark", "--out", str(out), "--p", "150,300", "--n", "60", "--p1", "5", "--splits", "2"]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(harness.BENCHMARK_FIELDS)
    assert [(int(r["p"]), r["method"]) for r in rows] == [(150, "RandMS"), (150, "MDS"), (300, "RandMS"), (300, "MDS")]
    table = list(csv.DictReader(open(tmp_path / "bench_table.csv")))
    assert len(table) == 4
    assert "p=300 MDS" in capsys.readouterr().out


def test_ladder_parsing():
    assert cli._ladder("1000,2000") == (1000, 2000)
    with pytest.raises(Exception):
        cli._ladder("10,x")
    assert cli.build_parser().parse_args(["benchmark", "--out", "x"]).p == (1000, 2000, 5000, 10000)
