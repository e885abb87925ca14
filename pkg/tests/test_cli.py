import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from memestream.cli import main
from memestream.evaluation import compare_exact, read_cover


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def stream_file(tmp_path_factory, runner):
    out = tmp_path_factory.mktemp("data") / "stream.jsonl"
    res = runner.invoke(main, ["synth", "--memes", "6", "--tweets", "1200",
                               "--duration", "360", "--seed", "5",
                               "--out", str(out)])
    assert res.exit_code == 0, res.output
    return out


def test_synth_deterministic_files(tmp_path, runner):
    digests = []
    for name in ("a", "b"):
        out = tmp_path / f"{name}.jsonl"
        res = runner.invoke(main, ["synth", "--memes", "50", "--tweets", "5000",
                                   "--duration", "600", "--seed", "42",
                                   "--out", str(out)])
        assert res.exit_code == 0, res.output
        digests.append((out.read_bytes(),
                        out.with_suffix(".truth.jsonl").read_bytes()))
    assert digests[0] == digests[1]


def test_seq_runs_and_writes_outputs(tmp_path, runner, stream_file):
    out = tmp_path / "run"
    res = runner.invoke(main, ["seq", "--input", str(stream_file),
                               "--out", str(out), "--k", "8", "--step", "30",
                               "--window", "6", "--nsigma", "2", "--seed", "1"])
    assert res.exit_code == 0, res.output
    assert "protomemes=" in res.output
    assert (out / "snapshots.jsonl").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "seq"
    assert manifest["config"]["k"] == 8
    assert "snapshots.jsonl" in manifest["outputs"]


def test_seq_accepts_heavy_parameters(tmp_path, runner, stream_file):
    out = tmp_path / "heavy"
    res = runner.invoke(main, ["seq", "--input", str(stream_file),
                               "--out", str(out), "--k", "240", "--step", "30",
                               "--window", "20", "--nsigma", "2"])
    assert res.exit_code == 0, res.output


def test_window_zero_is_usage_error(tmp_path, runner, stream_file):
    res = runner.invoke(main, ["seq", "--input", str(stream_file),
                               "--out", str(tmp_path / "x"), "--window", "0"])
    assert res.exit_code == 2


def test_missing_input_is_usage_error(tmp_path, runner):
    res = runner.invoke(main, ["seq", "--input", str(tmp_path / "nope.jsonl"),
                               "--out", str(tmp_path / "x")])
    assert res.exit_code == 2


def test_par_matches_seq_snapshots(tmp_path, runner, stream_file):
    seq_out = tmp_path / "seq"
    par_out = tmp_path / "par"
    args = ["--k", "8", "--step", "30", "--window", "6", "--nsigma", "2",
            "--seed", "1"]
    res = runner.invoke(main, ["seq", "--input", str(stream_file),
                               "--out", str(seq_out), *args])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["par", "--input", str(stream_file),
                               "--out", str(par_out), *args,
                               "--workers", "1", "--batch", "1",
                               "--deterministic", "--bootstrap-steps", "4"])
    assert res.exit_code == 0, res.output
    ok, report = compare_exact(read_cover(seq_out / "snapshots.jsonl"),
                               read_cover(par_out / "snapshots.jsonl"))
    assert ok, report
    assert (par_out / "metrics.json").exists()


def test_par_strategies_same_snapshots_different_bytes(tmp_path, runner,
                                                       stream_file):
    args = ["--k", "8", "--step", "30", "--window", "6", "--nsigma", "2",
            "--seed", "1", "--workers", "2", "--batch", "40",
            "--deterministic", "--bootstrap-steps", "4"]
    sizes = {}
    covers = {}
    for strategy in ("cluster-delta", "full-centroids"):
        out = tmp_path / strategy
        res = runner.invoke(main, ["par", "--input", str(stream_file),
                                   "--out", str(out), *args,
                                   "--strategy", strategy])
        assert res.exit_code == 0, res.output
        metrics = json.loads((out / "metrics.json").read_text())
        sizes[strategy] = metrics["aggregates"]["avg_message_bytes"]
        covers[strategy] = read_cover(out / "snapshots.jsonl")
    ok, report = compare_exact(covers["cluster-delta"], covers["full-centroids"])
    assert ok, report
    assert sizes["full-centroids"] != sizes["cluster-delta"]


def test_par_paper_shaped_flags_accepted(tmp_path, runner, stream_file):
    res = runner.invoke(main, ["par", "--input", str(stream_file),
                               "--out", str(tmp_path / "p"),
                               "--workers", "4", "--batch", "6144",
                               "--strategy", "cluster-delta",
                               "--bootstrap-steps", "4", "--deterministic",
                               "--k", "8"])
    assert res.exit_code == 0, res.output


def test_nmi_identity(tmp_path, runner, stream_file):
    truth = stream_file.with_suffix(".truth.jsonl")
    res = runner.invoke(main, ["nmi", "--a", str(truth), "--b", str(truth)])
    assert res.exit_code == 0
    assert res.output.strip() == "1.000000"


def test_dump_stopwords(runner):
    res = runner.invoke(main, ["--dump-stopwords"])
    assert res.exit_code == 0
    words = res.output.split()
    assert len(words) == 174
    assert "the" in words and "shan't" in words


def test_config_file_and_flag_precedence(tmp_path, runner, stream_file):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"k": 5, "step_seconds": 30, "window_steps": 6,
                               "nsigma": 2.0, "seed": 9, "workers": 2,
                               "batch_size": 16, "strategy": "cluster-delta",
                               "deterministic": True}))
    out = tmp_path / "cfgrun"
    res = runner.invoke(main, ["par", "--input", str(stream_file),
                               "--out", str(out), "--config", str(cfg),
                               "--k", "7", "--bootstrap-steps", "2"])
    assert res.exit_code == 0, res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["k"] == 7          # flag wins
    assert manifest["config"]["batch_size"] == 16  # config wins over default


def test_bench_row_count(tmp_path, runner, stream_file):
    out = tmp_path / "bench"
    res = runner.invoke(main, ["bench", "--input", str(stream_file),
                               "--out", str(out), "--workers", "1,2,4",
                               "--strategy", "both", "--batch", "40",
                               "--k", "8", "--deterministic",
                               "--bootstrap-steps", "2"])
    assert res.exit_code == 0, res.output
    rows = json.loads((out / "report.json").read_text())
    assert len(rows) == 6
    assert (out / "report.txt").exists()
    assert len([x for x in out.glob("metrics-*.json")]) == 6
