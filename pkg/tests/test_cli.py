import configparser
import json
import subprocess
import sys

import pytest

from vcbacktest.backtest import PredictionTable, write_predictions
from vcbacktest.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, OUT_ENV, run_command

FAST = ["--set", "model.epochs=2", "--set", "model.hidden_sizes=16", "--set", "backtest.nmf_k=4",
        "--set", "backtest.nmf_max_iters=20"]


@pytest.fixture(scope="module")
def synth_out(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    assert run_command(["synth", "--out", str(out), "--n", "400", "--seed", "2"]) == EXIT_OK
    return out


def read_config(path):
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(path)
    return cp


def test_usage_errors_exit_one(tmp_path, capsys):
    assert run_command([]) == EXIT_USAGE
    assert run_command(["frobnicate"]) == EXIT_USAGE
    assert run_command(["ingest", "--no-such-flag"]) == EXIT_USAGE
    assert run_command(["ingest", "--out", str(tmp_path), "--set", "nosuch.key=1"]) == EXIT_USAGE
    assert run_command(["ingest", "--out", str(tmp_path), "--set", "oops"]) == EXIT_USAGE
    assert run_command(["label", "--out", str(tmp_path), "--as-of", "June"]) == EXIT_USAGE
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nmystery = 1\n")
    assert run_command(["ingest", "--out", str(tmp_path), "--config", str(bad)]) == EXIT_USAGE
    assert "mystery" in capsys.readouterr().err


def test_missing_data_exits_two(tmp_path):
    assert run_command(["ingest", "--out", str(tmp_path), "--data", str(tmp_path / "nope")]) == EXIT_DATA
    assert run_command(["simulate", "--out", str(tmp_path)]) == EXIT_DATA


def test_ingest_writes_counts_and_manifest(synth_out):
    assert run_command(["ingest", "--out", str(synth_out)]) == EXIT_OK
    stats = (synth_out / "ingest_stats.csv").read_text().splitlines()
    assert stats[0] == "table,rows" and len(stats) > 5
    manifest = json.loads((synth_out / "manifest.json").read_text())
    assert manifest["command"] == "ingest"
    assert set(manifest["files"]) == {"ingest_stats.csv", "quarantine.csv", "run_config.ini"}


def test_label_precedence_flag_over_config(synth_out, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nas_of = 2018-01-01\n")
    out = tmp_path / "o"
    base = ["label", "--out", str(out), "--data", str(synth_out / "export"), "--config", str(cfg)]
    assert run_command(base) == EXIT_OK
    assert read_config(out / "run_config.ini")["run"]["as_of"] == "2018-01-01"
    assert run_command(base + ["--as-of", "2019-01-01"]) == EXIT_OK
    assert read_config(out / "run_config.ini")["run"]["as_of"] == "2019-01-01"
    assert run_command(base + ["--as-of", "snapshot"]) == EXIT_OK
    lines = (out / "labels.csv").read_text().splitlines()
    assert lines[0] == "uuid,label,outcome_kind,success_date,success_round_index"


def test_env_var_sets_default_output_directory(synth_out, tmp_path, monkeypatch):
    target = tmp_path / "from_env"
    monkeypatch.setenv(OUT_ENV, str(target))
    assert run_command(["ingest", "--data", str(synth_out / "export")]) == EXIT_OK
    assert (target / "ingest_stats.csv").is_file()


def test_empty_prediction_table_gives_empty_ledger(synth_out, tmp_path):
    preds = write_predictions(PredictionTable([]), tmp_path / "empty.csv")
    out = tmp_path / "sim"
    argv = ["simulate", "--out", str(out), "--data", str(synth_out / "export"), "--predictions", str(preds)]
    assert run_command(argv) == EXIT_OK
    assert len((out / "ledger.csv").read_text().splitlines()) == 1


def test_small_chain_is_reproducible_from_its_config(synth_out, tmp_path):
    data = ["--data", str(synth_out / "export")]
    out = tmp_path / "a"
    for cmd in (["backtest", "--start", "2018-01-01", "--end", "2019-01-01"],
                ["simulate", "--start", "2018-01-01", "--end", "2019-01-01"]):
        assert run_command(cmd + ["--out", str(out)] + data + FAST) == EXIT_OK
    assert (out / "predictions.csv").read_text().count("\n") > 1
    ledger = (out / "ledger.csv").read_bytes()
    sim_config = (out / "run_config.ini").read_text()
    assert run_command(["rank-founders", "--as-of", "2019-01-01", "--out", str(out)] + data) == EXIT_OK
    assert (out / "founder_scores.csv").read_text().count("\n") > 1

    # rerunning simulate from its own resolved config reproduces the ledger
    replay = tmp_path / "b"
    replay.mkdir()
    (replay / "predictions.csv").write_bytes((out / "predictions.csv").read_bytes())
    cfg = replay / "c.ini"
    cfg.write_text(sim_config.replace(str(out), str(replay)))
    assert run_command(["simulate", "--config", str(cfg)]) == EXIT_OK
    assert (replay / "ledger.csv").read_bytes() == ledger


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "vcbacktest", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("vcbacktest ")
    proc = subprocess.run([sys.executable, "-m", "vcbacktest"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
