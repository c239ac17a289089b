import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdc_sentinel.augment import PerturbationParams
from sdc_sentinel.metrics import DetectorScore, QualityReport
from sdc_sentinel.perf import EvaluationReport
from sdc_sentinel.persistence import (SUMMARY_COLUMNS, ManifestError,
                                      atomic_write_text, default_manifest, fmt_float, fmt_float32,
                                      load_manifest, loads_manifest, parse_manifest, read_profile,
                                      read_report, report_table_markdown, summary_csv,
                                      training_log_text, write_profile, write_report)


def test_manifest_roundtrip_and_hash():
    m = default_manifest("dct", seed=5)
    again = loads_manifest(m.dumps())
    assert again == m
    assert again.hash() == m.hash()
    assert m.with_overrides(seed=6).hash() != m.hash()


def test_manifest_with_perturbation_roundtrip():
    m = default_manifest("blackscholes")
    from dataclasses import replace

    m = replace(m, perturbation=PerturbationParams(perturbable_indices=(7,)))
    assert loads_manifest(m.dumps()) == m


@pytest.mark.parametrize("mutate,path", [
    (lambda d: d.pop("benchmark"), "benchmark"),
    (lambda d: d.update(benchmark="lulesh"), "benchmark"),
    (lambda d: d.update(format_version=2), "format_version"),
    (lambda d: d.pop("format_version"), "format_version"),
    (lambda d: d.update(extra=1), "extra"),
    (lambda d: d["fault_model"].update(rate_per_cycle="fast"), "fault_model.rate_per_cycle"),
    (lambda d: d["fault_model"].update(rate_per_cycle=2.0), "fault_model"),
    (lambda d: d["inputs"].update(train_count=0), "inputs.train_count"),
    (lambda d: d["inputs"].update(train_count=True), "inputs.train_count"),
    (lambda d: d["policy"].update(batch_size=0), "policy.batch_size"),
    (lambda d: d["policy"].update(detector="magic"), "policy.detector"),
    (lambda d: d["train_config"].update(momentum=1.5), "train_config"),
    (lambda d: d["train_config"].update(lr=0.1), "train_config.lr"),
    (lambda d: d.update(epsilon=0), "epsilon"),
    (lambda d: d.update(split_ratio=1.0), "split_ratio"),
    (lambda d: d.update(perturbation={"bogus": 1}), "perturbation.bogus"),
    (lambda d: d["frequencies"].update(f_overclocked=1.0), "frequencies"),
])
def test_manifest_errors_name_the_field(mutate, path):
    d = json.loads(default_manifest("dct").dumps())
    mutate(d)
    with pytest.raises(ManifestError) as exc:
        parse_manifest(d)
    assert exc.value.path == path
    assert str(exc.value).startswith(path)


def test_manifest_io(tmp_path):
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ManifestError):
        load_manifest(tmp_path / "bad.json")


def test_float_formatting():
    assert fmt_float(math.inf) == "inf"
    assert fmt_float(-math.inf) == "-inf"
    assert fmt_float(math.nan) == "nan"
    assert fmt_float(None) == "undefined"
    assert fmt_float(0.1) == "0.1"
    assert fmt_float32(np.float32(0.1)) == "0.1"


@given(st.floats(width=32, allow_nan=False, allow_infinity=False))
def test_float32_text_roundtrips(v):
    assert np.float32(float(fmt_float32(v))) == np.float32(v)


def test_profile_roundtrip(tmp_path):
    x = np.random.default_rng(0).normal(size=(20, 3)).astype(np.float32)
    x[0, 0] = np.inf
    csv_path, meta_path = write_profile(tmp_path / "p.csv", x, ["a", "b", "c"], {"task_kind": "k"})
    assert csv_path.read_text().splitlines()[0] == "a,b,c"
    back, header, meta = read_profile(csv_path)
    assert np.array_equal(back.view(np.uint32), x.view(np.uint32))
    assert meta["rows"] == 20 and meta["feature_dim"] == 3 and meta["task_kind"] == "k"
    meta_path.write_text(meta_path.read_text().replace('"format_version": 1', '"format_version": 7'))
    with pytest.raises(ValueError):
        read_profile(csv_path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    atomic_write_text(tmp_path / "sub" / "f.txt", "x")
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]


def _report(name, eeop, tpr=0.5):
    score = DetectorScore(tpr, 0.1, 0.9, None if tpr is None else 1 - tpr, 0.2, 0.1, 0.2, eeop)
    return EvaluationReport("dct", name, score, QualityReport("psnr_db", 35.0, 36.0), 1.8,
                            {"task": 1.0}, {"tp": 1}, "abc", {"batch_size": 1})


def test_summary_and_tables():
    reps = [_report("ann:10,2", math.inf), _report("oracle", 0.0, None)]
    text = summary_csv(reps, "oracle", "note here")
    lines = text.splitlines()
    assert lines[0].split(",") == list(SUMMARY_COLUMNS) + ["fittest"]
    assert ",inf," in lines[1]
    assert lines[2].split(",")[2] == "undefined" and lines[2].endswith("yes")
    assert lines[-1] == "# note here"
    plain = summary_csv(reps, mark_fittest=False).splitlines()[0]
    assert plain == ",".join(SUMMARY_COLUMNS)
    md = report_table_markdown(reps)
    assert md.splitlines()[0] == "| " + " | ".join(SUMMARY_COLUMNS) + " |"


def test_report_file_roundtrip(tmp_path):
    rep = _report("ann:10,2", math.inf)
    write_report(tmp_path / "r.json", rep)
    assert '"inf"' in (tmp_path / "r.json").read_text()
    assert read_report(tmp_path / "r.json") == rep


def test_training_log_text():
    text = training_log_text([(1, 0.5, 0.25, 98)])
    assert text == "epoch,train_loss,test_loss,tickets\n1,0.5,0.25,98\n"
