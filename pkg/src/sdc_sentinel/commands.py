"""The profile -> train -> evaluate -> simulate -> report pipeline behind the CLI.

Every command takes an ExperimentManifest and an output directory. Seeds for
inputs, faults and training all come from the manifest's master seed, so the
same manifest reproduces the same files byte for byte.
"""

from __future__ import annotations

import logging
import math
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .archs import ArchitectureSpec, synthesize
from .augment import PerturbationParams
from .harness import NONE, ORACLE, BaselineDetector, ExecutionPolicy, FaultModel, reliable_outputs
from .kernels import generate_inputs
from .mlp import DetectorModel, dumps_model, loads_model
from .perf import EvaluationReport, NoViableDetector, evaluate_policy, select_fittest
from .persistence import (ExperimentManifest, atomic_write_text, model_filename, read_profile,
                          read_report, report_table_markdown, summary_csv, summary_row,
                          training_log_text, write_json, write_profile, write_report)
from .seeding import derive_seed
from .tasks import Workload, get_kind
from .trainer import ProfileDataset, TrainResult, train_all

log = logging.getLogger(__name__)

PROFILE_FILE = "profile.csv"
MODELS_DIR = "models"
REPORTS_DIR = "reports"
SUMMARY_FILE = "summary.csv"
TRACE_FILE = "trace.ndjson"


def workload_for(manifest: ExperimentManifest, range_profile: str) -> Workload:
    spec = manifest.inputs
    count = spec.train_count if range_profile == "train" else spec.validation_count
    paths = spec.train_images if range_profile == "train" else spec.validation_images
    rng = np.random.default_rng(derive_seed(manifest.seed, "inputs", range_profile))
    return generate_inputs(manifest.benchmark, range_profile, count, rng, list(paths) or None,
                           spec.allow_synthetic, spec.image_size)


def fault_model_for(manifest: ExperimentManifest) -> FaultModel:
    fm = manifest.fault_model
    return replace(fm, rng_seed=derive_seed(manifest.seed, "faults", fm.rng_seed))


def perturbation_for(manifest: ExperimentManifest) -> PerturbationParams:
    if manifest.perturbation is not None:
        return manifest.perturbation
    return PerturbationParams(perturbable_indices=get_kind(manifest.benchmark).perturbable_indices)


# ---------------------------------------------------------------------------
# profile

def cmd_profile(manifest: ExperimentManifest, out_dir) -> Path:
    """Reliable run over the training inputs; one feature row per checked task."""
    kind = get_kind(manifest.benchmark)
    workload = workload_for(manifest, "train")
    outputs = kind.run_batch(workload.inputs)
    # always-reliable tasks are never checked, so they stay out of the profile
    checked = ~kind.reliable_batch(np.arange(len(workload)), workload.inputs)
    feats = kind.features_batch(workload.inputs[checked], outputs[checked])
    sidecar = {
        "task_kind": kind.name,
        "tasks": len(workload),
        "checked_tasks": int(checked.sum()),
        "range_profile": "train",
        "seed": manifest.seed,
        "manifest_hash": manifest.hash(),
    }
    path, _ = write_profile(Path(out_dir) / PROFILE_FILE, feats, kind.dim_names, sidecar)
    return path


def load_profile(path) -> ProfileDataset:
    vectors, header, meta = read_profile(path)
    return ProfileDataset(meta["task_kind"], vectors, header)


# ---------------------------------------------------------------------------
# train

def cmd_train(profile_path, manifest: ExperimentManifest, out_dir,
              workers: Optional[int] = None) -> list:
    """Train the seven candidates; writes one model file and one log per architecture.

    A diverged architecture gets a ``failed_{name}.txt`` note instead of a
    model; its siblings are still written. Returns the per-architecture results.
    """
    profile = load_profile(profile_path)
    if profile.task_kind != manifest.benchmark:
        raise ValueError(f"profile is for {profile.task_kind!r}, manifest for {manifest.benchmark!r}")
    config = replace(manifest.train_config, rng_seed=derive_seed(manifest.seed, "train"))
    results = train_all(profile, config, perturbation_for(manifest), workers=workers,
                        split_ratio=manifest.split_ratio, errors="collect")
    models_dir = Path(out_dir) / MODELS_DIR
    for arch, res in zip(synthesize(profile.feature_dim), results):
        if isinstance(res, TrainResult):
            res.model.metadata["manifest_hash"] = manifest.hash()
            atomic_write_text(models_dir / model_filename(arch.name), dumps_model(res.model))
            atomic_write_text(models_dir / f"log_{arch.name}.csv", training_log_text(res.log))
        else:
            atomic_write_text(models_dir / f"failed_{arch.name}.txt", f"{type(res).__name__}: {res}\n")
    return results


def load_models(models_dir) -> list[DetectorModel]:
    paths = sorted(Path(models_dir).glob("detector_*.json"))
    if not paths:
        raise FileNotFoundError(f"no detector_*.json model files in {models_dir}")
    models = [loads_model(p.read_text(encoding="utf-8")) for p in paths]
    # architecture order, not filename order: "10,16,2" sorts before "10,2"
    return sorted(models, key=lambda m: (len(m.architecture.dims), m.architecture.dims))


# ---------------------------------------------------------------------------
# evaluate

def parse_policy(text: str, models: Optional[list] = None):
    if text == "oracle":
        return ORACLE
    if text == "none":
        return NONE
    if text == "baseline":
        return BaselineDetector()
    if text.startswith("ann:"):
        name = ArchitectureSpec.parse(text[4:]).name
        for m in models or []:
            if m.name == name:
                return m
        raise ValueError(f"no trained model named {name!r}")
    raise ValueError(f"unknown policy {text!r}; expected ann:NAME, oracle, none or baseline")


class EvaluationResult:
    def __init__(self, reports, fittest: Optional[EvaluationReport], summary_path: Path):
        self.reports = reports
        self.fittest = fittest
        self.summary_path = summary_path


def cmd_evaluate(models_dir, manifest: ExperimentManifest, out_dir) -> EvaluationResult:
    """Every ANN plus oracle, none and baseline on one validation run with one fault draw.

    Writes ``reports/<detector>.json`` and ``summary.csv``. Raises
    NoViableDetector (after writing) when no ANN fits the overhead tolerance.
    """
    models = load_models(models_dir)
    kind = get_kind(manifest.benchmark)
    for m in models:
        if m.input_dim != kind.feature_dim:
            raise ValueError(f"model {m.name} expects {m.input_dim} features, "
                             f"{kind.name} produces {kind.feature_dim}")
    workload = workload_for(manifest, "validation")
    reliable = reliable_outputs(workload)
    fm = fault_model_for(manifest)
    mhash = manifest.hash()
    base_q = kind.quality(workload, reliable, reliable)
    pol = manifest.policy

    def run(detector) -> EvaluationReport:
        policy = ExecutionPolicy(detector, pol.batch_size, pol.gang_size)
        report, _ = evaluate_policy(workload, policy, fm, manifest.frequencies, manifest.epsilon,
                                    reliable, mhash, base_q)
        return report

    ann_reports = [run(m) for m in models]
    others = [run(d) for d in (ORACLE, NONE, BaselineDetector())]
    reports = ann_reports + others
    try:
        fittest = select_fittest(ann_reports)
        note = ""
    except NoViableDetector as exc:
        fittest = None
        note = str(exc)

    out = Path(out_dir)
    for r in reports:
        write_report(out / REPORTS_DIR / f"{_safe(r.detector)}.json", r)
    summary_path = atomic_write_text(
        out / SUMMARY_FILE, summary_csv(reports, fittest.detector if fittest else None, note))
    result = EvaluationResult(reports, fittest, summary_path)
    if fittest is None:
        raise NoViableDetector(note)
    return result


def _safe(name: str) -> str:
    return name.replace(":", "_")


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(manifest: ExperimentManifest, out_dir, models_dir=None,
                 policy: Optional[str] = None, outputs: bool = True) -> dict:
    """Full trace of one policy on the validation workload, plus its summary.

    ``fittest`` picks the EEOP winner among the trained models on this very run.
    """
    text = policy or manifest.policy.detector
    models = load_models(models_dir) if models_dir is not None else []
    workload = workload_for(manifest, "validation")
    reliable = reliable_outputs(workload)
    fm = fault_model_for(manifest)
    pol = manifest.policy

    def run(detector):
        return evaluate_policy(workload, ExecutionPolicy(detector, pol.batch_size, pol.gang_size),
                               fm, manifest.frequencies, manifest.epsilon, reliable, manifest.hash())

    if text == "fittest":
        if not models:
            raise ValueError("policy 'fittest' needs a models directory")
        runs = [run(m) for m in models]
        winner = select_fittest([r for r, _ in runs])
        report, trace = next((r, t) for r, t in runs if r is winner)
    else:
        report, trace = run(parse_policy(text, models))

    out = Path(out_dir)
    trace.write_ndjson(out / TRACE_FILE, outputs=outputs)
    summary = {
        "benchmark": report.benchmark,
        "detector": report.detector,
        "tasks": len(trace),
        "faulted_tasks": report.counts["faulted_tasks"],
        "overhead": report.score.overhead,
        "speedup": report.speedup,
        "quality": report.quality.to_dict(),
        "cycles": report.cycles,
        "manifest_hash": report.manifest_hash,
    }
    write_json(out / "simulation.json", summary)
    write_report(out / "simulation_report.json", report)
    return summary


# ---------------------------------------------------------------------------
# report

def cmd_report(report_paths, out_dir) -> tuple[Path, Path]:
    """Markdown and CSV tables of the given reports, sorted by EEOP (stable)."""
    paths = [Path(p) for p in report_paths]
    if not paths:
        raise FileNotFoundError("no report files given")
    for p in paths:
        if not p.is_file():
            raise FileNotFoundError(f"report {p} not found")
    reports = [read_report(p) for p in paths]
    reports = sorted(reports, key=lambda r: _eeop_key(r.score.eeop))
    out = Path(out_dir)
    md = atomic_write_text(out / "table.md", report_table_markdown(reports))
    csv_path = atomic_write_text(out / "table.csv", summary_csv(reports, mark_fittest=False))
    return md, csv_path


def _eeop_key(value: float) -> float:
    return math.inf if math.isnan(value) else value


__all__ = [
    "cmd_profile", "cmd_train", "cmd_evaluate", "cmd_simulate", "cmd_report", "workload_for",
    "fault_model_for", "perturbation_for", "load_profile", "load_models", "parse_policy",
    "summary_row",
]
