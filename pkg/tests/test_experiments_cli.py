from __future__ import annotations

import json
import math
import re

import pytest

from bxi import verification
from bxi.cli import EXIT_CHECKS, EXIT_ERROR, EXIT_OK, main
from bxi.experiments import (CSV_HEADER, ConfigError, ExperimentConfig, ResultRow, RunOutcome, build_report,
                             pool_rows, read_csv, rows_to_csv, run)

SMALL = {"experiment": "B_SERIES", "r_values": [1, 2], "lambda_values": [0.5, 1.0], "n_samples": 6,
         "seed": 11, "dt": 0.01}


def write_config(tmp_path, **over):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SMALL | over))
    return p


# --- configuration -------------------------------------------------------------------

def test_config_roundtrip_and_hash():
    cfg = ExperimentConfig.from_dict(SMALL)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    same = ExperimentConfig.from_dict(SMALL | {"workers": 3, "output_dir": "elsewhere"})
    assert same.config_hash == cfg.config_hash
    assert ExperimentConfig.from_dict(SMALL | {"seed": 12}).config_hash != cfg.config_hash


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"r_values": []},
    {"r_values": [2, 1]},
    {"r_values": [-1]},
    {"lambda_values": [-0.5]},
    {"n_samples": 0},
    {"n_samples": 2.5},
    {"seed": -1},
    {"h": 0.1},
    {"filter": "BOGUS"},
    {"experiment": "NOPE"},
    {"experiment": "MULTI_PACKET", "packets": [1]},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(SMALL | bad)


def test_config_missing_key():
    d = dict(SMALL)
    del d["seed"]
    with pytest.raises(ConfigError, match="missing"):
        ExperimentConfig.from_dict(d)


# --- csv -------------------------------------------------------------------------------

def test_csv_format():
    row = ResultRow("B_SERIES", "b", 2.0, 1.0, 1 / 3, 0.1, 10, 5, "abc")
    text = rows_to_csv([row])
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    fields = lines[1].split(",")
    assert fields[4] == "0.33333333333333331"
    assert len(re.sub(r"[^0-9]", "", fields[4]).lstrip("0")) == 17


def test_csv_roundtrip(tmp_path):
    rows = [ResultRow("B_SERIES", "b", 2.0, 1.0, 1 / 3, 0.1, 10, 5, "abc")]
    p = tmp_path / "r.csv"
    p.write_text(rows_to_csv(rows))
    assert read_csv(p) == rows
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(ConfigError):
        read_csv(tmp_path / "bad.csv")


def test_pooling_halves_the_variance():
    a = ResultRow("B_SERIES", "b", 2.0, 1.0, 0.2, 0.01, 100, 1, "h1")
    b = ResultRow("B_SERIES", "b", 2.0, 1.0, 0.4, 0.01, 100, 2, "h2")
    (p,) = pool_rows([a, b])
    assert p.value == pytest.approx(0.3) and p.n == 200
    assert p.stderr == pytest.approx(0.01 / math.sqrt(2))
    assert p.config_hash == "h1+h2"


# --- runs --------------------------------------------------------------------------------

def test_results_identical_across_reruns_and_workers(tmp_path):
    cfg = ExperimentConfig.from_dict(SMALL)
    texts = []
    for i, w in enumerate((1, 1, 2)):
        run(cfg, w, tmp_path / f"o{i}")
        texts.append((tmp_path / f"o{i}" / "results.csv").read_bytes())
    assert texts[0] == texts[1] == texts[2]
    summary = json.loads((tmp_path / "o0" / "summary.json").read_text())
    assert summary["config_hash"] == cfg.config_hash and summary["status"] == "PASS"
    assert (tmp_path / "o0" / "report.md").exists()


def test_workers_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("BXI_WORKERS", "2")
    cfg = ExperimentConfig.from_dict(SMALL)
    run(cfg, None, tmp_path / "env")
    monkeypatch.delenv("BXI_WORKERS")
    run(cfg, 1, tmp_path / "one")
    assert (tmp_path / "env" / "results.csv").read_bytes() == (tmp_path / "one" / "results.csv").read_bytes()


def test_disconnect_summary_field(tmp_path):
    cfg = ExperimentConfig.from_dict({"experiment": "DISCONNECT", "r_values": [1, 2, 3], "lambda_values": [0],
                                      "n_samples": 20, "seed": 3, "dt": 0.01})
    out = run(cfg, 1, tmp_path)
    assert "fit_minus_two_thirds" in out.summary
    assert [r.quantity for r in out.rows] == ["P(Z>0)"] * 3


def test_exclusion_threshold():
    assert RunOutcome([], {}, [], 1000, 10).status == "PASS"
    assert RunOutcome([], {}, [], 1000, 11).status == "FAILED"


# --- command line -------------------------------------------------------------------------

def test_cli_run_and_report(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "out")]) == EXIT_OK
    csv = tmp_path / "out" / "results.csv"
    assert main(["report", str(csv), str(csv), "--output", str(tmp_path / "rep.md")]) == EXIT_OK
    text, tables = build_report([csv])
    assert "Exponent report" in text and tables


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--config", str(write_config(tmp_path, bogus=1))]) == EXIT_ERROR
    assert "unknown keys" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_ERROR
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["run", "--config", str(tmp_path / "bad.json")]) == EXIT_ERROR
    assert main(["report"]) == EXIT_ERROR


def test_cli_verify_exit_codes(monkeypatch, capsys):
    assert main(["verify", "--suite", "exponents"]) == EXIT_OK
    failing = [verification.Check("forced", False, "")]
    monkeypatch.setitem(verification.SUITES, "exponents", lambda seed=0: failing)
    assert main(["verify", "--suite", "exponents"]) == EXIT_CHECKS
    assert "FAIL  forced" in capsys.readouterr().out


def test_cli_run_failing_checks_exit_code(tmp_path, monkeypatch):
    from bxi import cli
    monkeypatch.setattr(cli, "run", lambda cfg, w, d: RunOutcome([], {}, [verification.Check("x", False, "")], 1, 0))
    assert main(["run", "--config", str(write_config(tmp_path))]) == EXIT_CHECKS


def test_shipped_configs_parse():
    from pathlib import Path
    paths = sorted((Path(__file__).parent.parent / "scripts" / "configs").glob("*.json"))
    assert paths
    for p in paths:
        ExperimentConfig.load(p)
