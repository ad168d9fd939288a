import json

import numpy as np
import pytest

from irs_crb import cli, rbf
from irs_crb.scenario import ScenarioConfig


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(ScenarioConfig(M=4, N_h=2, N_v=2).to_dict()))
    return str(p)


def sweep(cfg_file, out, *extra):
    return cli.main(["sweep", "--config", cfg_file, "--out", str(out), *extra])


def test_single_row(cfg_file, tmp_path):
    out = tmp_path / "one.csv"
    assert sweep(cfg_file, out, "--sweep", "P_t", "--values", "5", "--modes", "TxOnly") == 0
    rows = cli.read_csv(out)
    assert len(rows) == 1
    r = rows[0]
    assert list(r) == cli.header(2)
    assert r["mode"] == "TxOnly" and r["status"] == "ok" and r["seed"] == "0"
    assert float(r["max_crb"]) == max(float(r["crb_irs_1"]), float(r["crb_irs_2"]))
    assert r["wall_ms"] == ""


def test_row_count_json_summary_and_traces(cfg_file, tmp_path):
    out = tmp_path / "grid.csv"
    assert sweep(cfg_file, out, "--sweep", "a_max", "--values", "2,8", "--modes",
                 "TxOnly,RbfOnly", "--trials", "2", "--seed", "10", "--traces",
                 "--timing") == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2 * 2 * 2 + 1
    rows = cli.read_csv(out)
    assert sorted({r["seed"] for r in rows}) == ["10", "11"]
    assert all(float(r["wall_ms"]) > 0 for r in rows)
    summary = json.loads(out.with_suffix(".json").read_text())
    assert len(summary["points"]) == 4
    # aggregates come from the CSV alone
    assert cli.aggregate(rows) == summary["points"]
    traces = out.with_suffix(".traces.jsonl").read_text().splitlines()
    assert len(traces) == 8 and json.loads(traces[0])["trace"]["records"]


def test_byte_identical_reruns(cfg_file, tmp_path):
    args = ("--sweep", "M", "--values", "2,4", "--modes", "Joint,TxOnly", "--seed", "3")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    sweep(cfg_file, a, *args)
    sweep(cfg_file, b, *args)
    assert a.read_bytes() == b.read_bytes()


def test_parallel_jobs_match_serial(cfg_file, tmp_path, monkeypatch):
    args = ("--sweep", "P_t", "--values", "1,10", "--modes", "TxOnly", "--trials", "2")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    sweep(cfg_file, a, *args, "--jobs", "1")
    monkeypatch.setenv(cli.JOBS_ENV, "2")
    sweep(cfg_file, b, *args, "--jobs", "1")
    assert a.read_bytes() == b.read_bytes()


def test_jobs_env_overrides_flag(monkeypatch):
    monkeypatch.delenv(cli.JOBS_ENV, raising=False)
    assert cli.resolve_jobs(3) == 3
    assert cli.resolve_jobs(None) == 1
    monkeypatch.setenv(cli.JOBS_ENV, "5")
    assert cli.resolve_jobs(3) == 5


def test_failed_point_is_recorded_not_fatal(cfg_file, tmp_path):
    out = tmp_path / "bad.csv"
    assert sweep(cfg_file, out, "--sweep", "P_s", "--values", "1e-20,0.1",
                 "--modes", "TxOnly") == 0
    rows = cli.read_csv(out)
    assert rows[0]["status"] == "error:InfeasibleScenario"
    assert rows[0]["max_crb"] == "nan"
    assert rows[1]["status"] == "ok"
    agg = cli.aggregate(rows)
    assert agg[0]["failed"] == 1 and agg[0]["n"] == 0


@pytest.mark.parametrize("kw", [dict(param="N", values=[1]), dict(param="P_t", values=[]),
                                dict(param="P_t", values=[-1.0]),
                                dict(param="P_t", values=[1.0], trials=0),
                                dict(param="P_t", values=[1.0], modes=["Both"])])
def test_sweep_spec_validation(kw):
    with pytest.raises(ValueError):
        cli.SweepSpec(**kw)


def test_bad_arguments_exit_nonzero(cfg_file, tmp_path, capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["sweep", "--sweep", "N", "--values", "1"])
    assert e.value.code == 2
    assert sweep(cfg_file, tmp_path / "x.csv", "--sweep", "P_t", "--values", "0") == 2
    assert cli.main(["sweep", "--config", str(tmp_path / "missing.json"), "--sweep", "P_t",
                     "--values", "1"]) == 2


def test_fmt_round_trips():
    x = 0.1 + 0.2
    assert float(cli.fmt(x)) == x
    assert cli.fmt(np.int64(16)) == "16"
    assert cli.fmt(float("nan")) == "nan"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_verify_passes_for_any_seed(seed, capsys):
    assert cli.main(["verify", "--seed", str(seed), "--instances", "4"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_verify_catches_sign_flip(monkeypatch, capsys):
    original = rbf.q_terms

    def flipped(Theta, st):
        q = original(Theta, st)
        q["tb"] = -q["tb"]
        return q

    monkeypatch.setattr(rbf, "q_terms", flipped)
    assert cli.main(["verify", "--instances", "3"]) == 1
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("Q_tb gradient"))
    assert line.rstrip().endswith("FAIL")
