"""Experiment manifests and on-disk formats (CSV for bulk numbers, JSON for metadata).

Floats are written with the shortest decimal that round-trips, non-finite
values as ``nan``/``inf``/``-inf``, and every file goes through a temporary
file plus rename so readers never observe a partial write.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .augment import PerturbationParams
from .harness import FaultModel
from .metrics import DEFAULT_EPSILON
from .mlp import TrainConfig
from .perf import EvaluationReport, FrequencyPair
from .tasks import kind_names

FORMAT_VERSION = 1
MANIFEST_FORMAT = "sdc-sentinel-manifest"
PROFILE_FORMAT = "sdc-sentinel-profile"
SUMMARY_COLUMNS = ("benchmark", "detector", "TPR", "FPR", "MRE", "EE", "overhead", "EEOP",
                   "quality", "speedup")


class ManifestError(ValueError):
    """Invalid manifest content; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------------------
# number formatting

def fmt_float(value) -> str:
    if value is None:
        return "undefined"
    v = float(value)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def fmt_float32(value) -> str:
    v = np.float32(value)
    if not np.isfinite(v):
        return fmt_float(float(v))
    # numpy prints the shortest decimal that round-trips to the same float32
    return str(v)


def parse_float(text: str) -> float:
    return float(text)  # accepts nan / inf / -inf


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else fmt_float(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_json_ready(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# atomic writes

def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, obj) -> Path:
    return atomic_write_text(path, dumps_json(obj))


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# manifest

DEFAULT_COUNTS = {
    "dct": (1, 1),
    "sobel": (1, 1),
    "blackscholes": (20000, 100000),
    "inversek2j": (20000, 100000),
}


@dataclass(frozen=True)
class InputSpec:
    # images for dct/sobel, tasks otherwise
    train_count: int = 1
    validation_count: int = 1
    train_images: tuple = ()
    validation_images: tuple = ()
    allow_synthetic: bool = True
    image_size: int = 512


@dataclass(frozen=True)
class PolicySpec:
    # "fittest", "ann:NAME", "oracle", "none" or "baseline"
    detector: str = "fittest"
    batch_size: int = 1
    gang_size: int = 4096


@dataclass(frozen=True)
class ExperimentManifest:
    benchmark: str
    inputs: InputSpec = InputSpec()
    fault_model: FaultModel = FaultModel()
    policy: PolicySpec = PolicySpec()
    train_config: TrainConfig = TrainConfig()
    perturbation: Optional[PerturbationParams] = None  # None: the kind's defaults
    frequencies: FrequencyPair = FrequencyPair()
    epsilon: float = DEFAULT_EPSILON
    split_ratio: float = 0.9
    seed: int = 0
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "format_version": self.format_version,
            "benchmark": self.benchmark,
            "seed": self.seed,
            "epsilon": self.epsilon,
            "split_ratio": self.split_ratio,
            "inputs": {**asdict(self.inputs), "train_images": list(self.inputs.train_images),
                       "validation_images": list(self.inputs.validation_images)},
            "fault_model": self.fault_model.to_dict(),
            "policy": asdict(self.policy),
            "train_config": asdict(self.train_config),
            "perturbation": None if self.perturbation is None else self.perturbation.to_dict(),
            "frequencies": self.frequencies.to_dict(),
        }

    def dumps(self) -> str:
        return dumps_json(self.to_dict())

    def hash(self) -> str:
        canon = json.dumps(_json_ready(self.to_dict()), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_overrides(self, seed=None, fault_rate=None, batch_size=None, epsilon=None,
                       policy=None) -> "ExperimentManifest":
        m = self
        if seed is not None:
            m = replace(m, seed=int(seed))
        if fault_rate is not None:
            m = replace(m, fault_model=_build("fault_model.rate_per_cycle", lambda: replace(
                m.fault_model, rate_per_cycle=float(fault_rate))))
        if batch_size is not None or policy is not None:
            p = m.policy
            if batch_size is not None:
                p = replace(p, batch_size=int(batch_size))
            if policy is not None:
                p = replace(p, detector=str(policy))
            m = replace(m, policy=p)
        if epsilon is not None:
            m = replace(m, epsilon=float(epsilon))
        _validate_manifest(m)
        return m


def default_manifest(benchmark: str, seed: int = 0) -> ExperimentManifest:
    train, val = DEFAULT_COUNTS.get(benchmark, (1000, 1000))
    return ExperimentManifest(benchmark=benchmark, inputs=InputSpec(train, val), seed=seed)


def _build(path: str, fn):
    try:
        return fn()
    except ManifestError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ManifestError(path, str(exc)) from None


def _section(d: dict, key: str, cls, path: str, required: bool = False):
    if key not in d:
        if required:
            raise ManifestError(f"{path}{key}", "missing field")
        return cls()
    value = d[key]
    if not isinstance(value, dict):
        raise ManifestError(f"{path}{key}", "expected an object")
    known = {f.name for f in fields(cls)}
    for k in value:
        if k not in known:
            raise ManifestError(f"{path}{key}.{k}", "unknown field")
    kwargs = {}
    for f in fields(cls):
        if f.name not in value:
            continue
        kwargs[f.name] = _coerce(value[f.name], f.default, f"{path}{key}.{f.name}")
    return _build(f"{path}{key}", lambda: cls(**kwargs))


def _coerce(value, default, path: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ManifestError(path, "expected true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ManifestError(path, "expected an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ManifestError(path, "expected a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ManifestError(path, "expected a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ManifestError(path, "expected a list of strings")
        return tuple(value)
    return value


def parse_manifest(d) -> ExperimentManifest:
    if not isinstance(d, dict):
        raise ManifestError("$", "manifest must be a JSON object")
    if d.get("format", MANIFEST_FORMAT) != MANIFEST_FORMAT:
        raise ManifestError("format", f"expected {MANIFEST_FORMAT!r}")
    if "format_version" not in d:
        raise ManifestError("format_version", "missing field")
    if d["format_version"] != FORMAT_VERSION:
        raise ManifestError("format_version",
                            f"unsupported version {d['format_version']!r} (expected {FORMAT_VERSION})")
    known = {"format", "format_version", "benchmark", "seed", "epsilon", "split_ratio", "inputs",
             "fault_model", "policy", "train_config", "perturbation", "frequencies"}
    for k in d:
        if k not in known:
            raise ManifestError(k, "unknown field")
    if "benchmark" not in d:
        raise ManifestError("benchmark", "missing field")
    bench = d["benchmark"]
    if not isinstance(bench, str) or bench not in kind_names():
        raise ManifestError("benchmark", f"expected one of {kind_names()}")

    fm = d.get("fault_model", {})
    if not isinstance(fm, dict):
        raise ManifestError("fault_model", "expected an object")
    for k in fm:
        if k not in ("rate_per_cycle", "max_bits_per_fault", "rng_seed", "fault_site"):
            raise ManifestError(f"fault_model.{k}", "unknown field")
    base = FaultModel()
    fault_model = _build("fault_model", lambda: FaultModel(
        _coerce(fm.get("rate_per_cycle", base.rate_per_cycle), 0.0, "fault_model.rate_per_cycle"),
        _coerce(fm.get("max_bits_per_fault", base.max_bits_per_fault), 0,
                "fault_model.max_bits_per_fault"),
        _coerce(fm.get("rng_seed", base.rng_seed), 0, "fault_model.rng_seed"),
        _coerce(fm.get("fault_site", base.fault_site), "", "fault_model.fault_site"),
    ))

    pert = d.get("perturbation")
    if pert is not None:
        if not isinstance(pert, dict):
            raise ManifestError("perturbation", "expected an object or null")
        known_p = {f.name for f in fields(PerturbationParams)}
        for k in pert:
            if k not in known_p:
                raise ManifestError(f"perturbation.{k}", "unknown field")
        pert = _build("perturbation", lambda: PerturbationParams.from_dict(pert))

    fq = d.get("frequencies", {})
    if not isinstance(fq, dict):
        raise ManifestError("frequencies", "expected an object")
    for k in fq:
        if k not in ("f_nominal", "f_overclocked", "v_nominal"):
            raise ManifestError(f"frequencies.{k}", "unknown field")
    fbase = FrequencyPair()
    freq = _build("frequencies", lambda: FrequencyPair(
        _coerce(fq.get("f_nominal", fbase.f_nominal), 0.0, "frequencies.f_nominal"),
        _coerce(fq.get("f_overclocked", fbase.f_overclocked), 0.0, "frequencies.f_overclocked"),
        _coerce(fq.get("v_nominal", fbase.v_nominal), 0.0, "frequencies.v_nominal"),
    ))

    m = ExperimentManifest(
        benchmark=bench,
        inputs=_section(d, "inputs", InputSpec, ""),
        fault_model=fault_model,
        policy=_section(d, "policy", PolicySpec, ""),
        train_config=_section(d, "train_config", TrainConfig, ""),
        perturbation=pert,
        frequencies=freq,
        epsilon=_coerce(d.get("epsilon", DEFAULT_EPSILON), 0.0, "epsilon"),
        split_ratio=_coerce(d.get("split_ratio", 0.9), 0.0, "split_ratio"),
        seed=_coerce(d.get("seed", 0), 0, "seed"),
    )
    _validate_manifest(m)
    return m


def _validate_manifest(m: ExperimentManifest) -> None:
    if m.inputs.train_count < 1:
        raise ManifestError("inputs.train_count", "must be positive")
    if m.inputs.validation_count < 1:
        raise ManifestError("inputs.validation_count", "must be positive")
    if m.inputs.image_size < 8 or m.inputs.image_size % 16:
        raise ManifestError("inputs.image_size", "must be a positive multiple of 16")
    if not m.epsilon > 0:
        raise ManifestError("epsilon", "must be positive")
    if not 0 < m.split_ratio < 1:
        raise ManifestError("split_ratio", "must lie in (0, 1)")
    p = m.policy
    if p.batch_size < 1:
        raise ManifestError("policy.batch_size", "must be positive")
    if p.gang_size < p.batch_size:
        raise ManifestError("policy.gang_size", "must be at least batch_size")
    det = p.detector
    if not (det in ("fittest", "oracle", "none", "baseline")
            or (det.startswith("ann:") and len(det) > 4)):
        raise ManifestError("policy.detector",
                            "expected fittest, oracle, none, baseline or ann:NAME")


def loads_manifest(text: str) -> ExperimentManifest:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError("$", f"not valid JSON ({exc})") from None
    return parse_manifest(d)


def load_manifest(path) -> ExperimentManifest:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError("$", f"cannot read manifest: {exc}") from None
    return loads_manifest(text)


# ---------------------------------------------------------------------------
# profiles

def write_profile(csv_path, vectors: np.ndarray, dim_names, sidecar: dict) -> tuple[Path, Path]:
    vectors = np.asarray(vectors, dtype=np.float32)
    rows = ([fmt_float32(v) for v in row] for row in vectors)
    csv_path = atomic_write_text(csv_path, csv_text(list(dim_names), rows))
    meta = {"format": PROFILE_FORMAT, "format_version": FORMAT_VERSION,
            "feature_dim": int(vectors.shape[1]), "rows": int(vectors.shape[0]),
            "dim_names": list(dim_names), **sidecar}
    json_path = write_json(csv_path.with_suffix(".json"), meta)
    return csv_path, json_path


def read_profile(csv_path) -> tuple[np.ndarray, list, dict]:
    csv_path = Path(csv_path)
    meta_path = csv_path.with_suffix(".json")
    if not meta_path.exists():
        raise FileNotFoundError(f"profile sidecar {meta_path} not found")
    meta = read_json(meta_path)
    if meta.get("format") != PROFILE_FORMAT or meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{meta_path}: unsupported profile format")
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[parse_float(x) for x in row] for row in reader]
    if header != meta["dim_names"]:
        raise ValueError(f"{csv_path}: header does not match the sidecar dimension names")
    vectors = np.array(data, dtype=np.float32).reshape(-1, len(header))
    if vectors.shape[0] != meta["rows"]:
        raise ValueError(f"{csv_path}: expected {meta['rows']} rows, found {vectors.shape[0]}")
    return vectors, header, meta


# ---------------------------------------------------------------------------
# models and training logs

def model_filename(arch_name: str) -> str:
    return f"detector_{arch_name}.json"


def training_log_text(log) -> str:
    rows = ([epoch, fmt_float(train), fmt_float(test), tickets] for epoch, train, test, tickets in log)
    return csv_text(["epoch", "train_loss", "test_loss", "tickets"], rows)


# ---------------------------------------------------------------------------
# reports

def summary_row(report: EvaluationReport) -> list:
    s = report.score
    return [report.benchmark, report.detector, fmt_float(s.tpr), fmt_float(s.fpr),
            fmt_float(s.mre), fmt_float(s.ee), fmt_float(s.overhead), fmt_float(s.eeop),
            fmt_float(report.quality.value), fmt_float(report.speedup)]


def summary_csv(reports, fittest: Optional[str] = None, note: str = "",
                mark_fittest: bool = True) -> str:
    """Summary table; with ``mark_fittest`` a trailing column flags the EEOP winner."""
    if mark_fittest:
        header = list(SUMMARY_COLUMNS) + ["fittest"]
        rows = [summary_row(r) + ["yes" if r.detector == fittest else ""] for r in reports]
    else:
        header = list(SUMMARY_COLUMNS)
        rows = [summary_row(r) for r in reports]
    text = csv_text(header, rows)
    if note:
        text += f"# {note}\n"
    return text


def write_report(path, report: EvaluationReport) -> Path:
    return write_json(path, {"format": "sdc-sentinel-report", "format_version": FORMAT_VERSION,
                             **report.to_dict()})


def _decode_floats(obj):
    if isinstance(obj, dict):
        return {k: _decode_floats(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_floats(v) for v in obj]
    if obj in ("inf", "-inf", "nan"):
        return float(obj)
    return obj


def read_report(path) -> EvaluationReport:
    d = read_json(path)
    if d.get("format") != "sdc-sentinel-report":
        raise ValueError(f"{path}: not an evaluation report")
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported report format_version {d.get('format_version')!r}")
    return EvaluationReport.from_dict(_decode_floats(d))


def report_table_markdown(reports) -> str:
    header = list(SUMMARY_COLUMNS)
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in reports:
        lines.append("| " + " | ".join(summary_row(r)) + " |")
    return "\n".join(lines) + "\n"
