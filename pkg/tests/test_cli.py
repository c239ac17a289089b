import json
from types import SimpleNamespace

import pytest
from click.testing import CliRunner

from sdc_sentinel.cli import main
from sdc_sentinel.perf import FrequencyPair, speedup
from sdc_sentinel.persistence import SUMMARY_COLUMNS


def _invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    manifest = root / "m.json"
    assert _invoke("init-manifest", "blackscholes", "-o", manifest).exit_code == 0
    d = json.loads(manifest.read_text())
    d["inputs"].update(train_count=1500, validation_count=3000)
    d["train_config"].update(max_epochs=15, minibatch_size=128)
    d["fault_model"]["rate_per_cycle"] = 1e-5
    manifest.write_text(json.dumps(d))
    out = root / "run"
    r = _invoke("profile", "--manifest", manifest, "--out", out)
    assert r.exit_code == 0, r.output
    r = _invoke("train", "--manifest", manifest, "--out", out)
    assert r.exit_code == 0, r.output
    return manifest, out


def test_init_manifest_rejects_unknown_benchmark(tmp_path):
    r = _invoke("init-manifest", "lulesh", "-o", tmp_path / "m.json")
    assert r.exit_code == 2


def test_malformed_manifest_exit_code_and_path(tmp_path, trained):
    manifest, _ = trained
    d = json.loads(manifest.read_text())
    d["policy"]["batch_size"] = "eight"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    r = _invoke("profile", "--manifest", bad, "--out", tmp_path / "o")
    assert r.exit_code == 2
    assert "policy.batch_size" in r.output


def test_train_writes_seven_models(trained):
    _, out = trained
    models = sorted(p.name for p in (out / "models").glob("detector_*.json"))
    assert len(models) == 7
    assert len(list((out / "models").glob("log_*.csv"))) == 7


def test_profile_is_reproducible(tmp_path, trained):
    manifest, out = trained
    assert _invoke("profile", "--manifest", manifest, "--out", tmp_path).exit_code == 0
    assert (tmp_path / "profile.csv").read_bytes() == (out / "profile.csv").read_bytes()
    assert (tmp_path / "profile.json").read_bytes() == (out / "profile.json").read_bytes()
    assert _invoke("profile", "--manifest", manifest, "--out", tmp_path / "s", "--seed", 9).exit_code == 0
    assert (tmp_path / "s" / "profile.csv").read_bytes() != (out / "profile.csv").read_bytes()


def test_evaluate_with_no_viable_detector_exits_3(tmp_path, trained):
    manifest, out = trained
    r = _invoke("evaluate", "--manifest", manifest, "--out", tmp_path, "--models", out / "models",
                "--epsilon", 1e-9)
    assert r.exit_code == 3
    assert "no viable detector" in r.output
    summary = (tmp_path / "summary.csv").read_text()
    assert "# no viable detector" in summary
    assert len(list((tmp_path / "reports").glob("*.json"))) == 10


def test_evaluate_picks_a_fittest(tmp_path, trained):
    manifest, out = trained
    r = _invoke("evaluate", "--manifest", manifest, "--out", tmp_path, "--models", out / "models",
                "--epsilon", 100, "--batch-size", 16)
    assert r.exit_code == 0, r.output
    lines = (tmp_path / "summary.csv").read_text().splitlines()
    assert lines[0].split(",") == list(SUMMARY_COLUMNS) + ["fittest"]
    assert sum(line.endswith(",yes") for line in lines) == 1
    assert r.output.strip().splitlines()[-1].startswith("fittest: ann:")

    rr = _invoke("report", *sorted((tmp_path / "reports").glob("*.json")), "--out", tmp_path / "t")
    assert rr.exit_code == 0
    header = (tmp_path / "t" / "table.csv").read_text().splitlines()[0]
    assert header.split(",") == list(SUMMARY_COLUMNS)


def test_simulate_trace(tmp_path, trained):
    manifest, out = trained
    r = _invoke("simulate", "--manifest", manifest, "--out", tmp_path, "--models", out / "models",
                "--policy", "ann:8,2", "--batch-size", 8)
    assert r.exit_code == 0, r.output
    lines = (tmp_path / "trace.ndjson").read_text().splitlines()
    assert len(lines) == 3000
    summary = json.loads((tmp_path / "simulation.json").read_text())
    records = [SimpleNamespace(**json.loads(x)) for x in lines]
    assert summary["speedup"] == pytest.approx(speedup(records, FrequencyPair()), rel=1e-12)
    assert "tasks=3000" in r.output
    assert "input" in json.loads(lines[0])


def test_simulate_rate_zero_has_no_faults(tmp_path, trained):
    manifest, _ = trained
    r = _invoke("simulate", "--manifest", manifest, "--out", tmp_path, "--policy", "none",
                "--fault-rate", 0, "--no-outputs")
    assert r.exit_code == 0, r.output
    assert "faulted=0 " in r.output
    rows = [json.loads(x) for x in (tmp_path / "trace.ndjson").read_text().splitlines()]
    assert not any(row["faulted"] for row in rows)
    assert "observed_output" not in rows[0]


def test_simulate_unknown_policy(tmp_path, trained):
    manifest, _ = trained
    r = _invoke("simulate", "--manifest", manifest, "--out", tmp_path, "--policy", "magic")
    assert r.exit_code == 2


def test_report_without_files(tmp_path):
    assert _invoke("report", "--out", tmp_path).exit_code == 2
