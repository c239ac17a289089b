"""Overhead and speedup accounting, detector scoring and EEOP-based selection.

Cycles come from the kernels' operation-count model. The speedup compares a
fully reliable run at the nominal frequency with an overclocked run whose
detection and correction work executes reliably at the nominal frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .harness import ExecutionPolicy, FaultModel, Trace, execute
from .metrics import (DEFAULT_EPSILON, DetectorScore, QualityReport, confusion_rates, eeop,
                      expected_error)
from .tasks import Workload, get_kind


class NoViableDetector(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyPair:
    f_nominal: float = 1.67  # GHz
    f_overclocked: float = 3.7  # GHz
    v_nominal: float = 0.9  # volts, informational

    def __post_init__(self):
        if self.f_nominal <= 0:
            raise ValueError("f_nominal must be positive")
        if self.f_overclocked < self.f_nominal:
            raise ValueError("f_overclocked must be at least f_nominal")

    @property
    def bound(self) -> float:
        return self.f_overclocked / self.f_nominal

    def to_dict(self) -> dict:
        return {"f_nominal": self.f_nominal, "f_overclocked": self.f_overclocked,
                "v_nominal": self.v_nominal}

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyPair":
        return cls(float(d["f_nominal"]), float(d["f_overclocked"]), float(d["v_nominal"]))


def poff_fault_rate(voltage_below_poff_mv: float, poff_rate: float = 1e-7,
                    mv_per_decade: float = 10.0) -> float:
    """Fault rate per cycle at a supply voltage below the point of first failure.

    The rate rises one decade per ``mv_per_decade`` millivolts of undervolting
    past the PoFF, where it is ``poff_rate``. Capped just below 1.
    """
    if voltage_below_poff_mv < 0:
        raise ValueError("voltage delta must be non-negative")
    return min(poff_rate * 10.0 ** (voltage_below_poff_mv / mv_per_decade), 1.0 - 1e-12)


def _trace_totals(records) -> dict:
    if isinstance(records, Trace):
        return records.totals()
    tot = {"task": 0.0, "task_unreliable": 0.0, "task_always_reliable": 0.0,
           "detect": 0.0, "correct": 0.0}
    for r in records:
        tot["task"] += r.cycles_task
        tot["task_always_reliable" if r.always_reliable else "task_unreliable"] += r.cycles_task
        tot["detect"] += r.cycles_detect
        tot["correct"] += r.cycles_correct
    tot["total"] = tot["task"] + tot["detect"] + tot["correct"]
    return tot


def overhead(records, reliable_total_cycles: Optional[float] = None) -> float:
    """(detection + correction cycles) / cycles of the fully reliable run."""
    tot = _trace_totals(records)
    base = tot["task"] if reliable_total_cycles is None else reliable_total_cycles
    if base <= 0:
        raise ValueError("reliable_total_cycles must be positive")
    return (tot["detect"] + tot["correct"]) / base


def speedup(records, freq: FrequencyPair = FrequencyPair()) -> float:
    tot = _trace_totals(records)
    if tot["task"] <= 0:
        raise ValueError("empty ledger")
    t_base = tot["task"] / freq.f_nominal
    t_run = (tot["task_unreliable"] / freq.f_overclocked
             + (tot["task_always_reliable"] + tot["detect"] + tot["correct"]) / freq.f_nominal)
    return t_base / t_run


@dataclass(frozen=True)
class EvaluationReport:
    benchmark: str
    detector: str
    score: DetectorScore
    quality: QualityReport
    speedup: float
    cycles: dict
    counts: dict
    manifest_hash: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "benchmark": self.benchmark,
            "detector": self.detector,
            "score": self.score.to_dict(),
            "quality": self.quality.to_dict(),
            "speedup": self.speedup,
            "cycles": dict(self.cycles),
            "counts": dict(self.counts),
            "manifest_hash": self.manifest_hash,
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(
            benchmark=d["benchmark"], detector=d["detector"],
            score=DetectorScore.from_dict(d["score"]),
            quality=QualityReport.from_dict(d["quality"]),
            speedup=float(d["speedup"]),
            cycles={k: float(v) for k, v in d["cycles"].items()},
            counts={k: int(v) for k, v in d["counts"].items()},
            manifest_hash=d.get("manifest_hash", ""),
            extra=dict(d.get("extra", {})),
        )


def report_from_trace(trace: Trace, workload: Workload, freq: FrequencyPair = FrequencyPair(),
                      epsilon: float = DEFAULT_EPSILON, manifest_hash: str = "",
                      baseline_quality: Optional[float] = None) -> EvaluationReport:
    kind = get_kind(trace.kind)
    counts = trace.confusion()
    ovh = overhead(trace)
    rates = confusion_rates(counts)
    # same value as missed_relative_error over the false-negative pairs, computed columnwise
    mre = trace.missed_mre()
    ee = expected_error(rates.tpr, mre)
    score = DetectorScore(rates.tpr, rates.fpr, rates.tnr, rates.fnr, mre, ee, ovh,
                          eeop(ee, ovh, epsilon))
    if baseline_quality is None:
        baseline_quality = kind.quality(workload, trace.reliable, trace.reliable)
    quality = QualityReport(kind.quality_kind, kind.quality(workload, trace.final, trace.reliable),
                            baseline_quality)
    return EvaluationReport(
        benchmark=trace.kind, detector=trace.policy, score=score, quality=quality,
        speedup=speedup(trace, freq), cycles=trace.totals(),
        counts={"tp": counts.tp, "fp": counts.fp, "tn": counts.tn, "fn": counts.fn,
                "tasks": len(trace), "faulted_tasks": int(trace.faulted.sum()),
                "reexecuted_tasks": int(trace.reexecuted.sum()),
                "mismatched_tasks": int(trace.mismatches().size)},
        manifest_hash=manifest_hash,
        extra={"batch_size": trace.meta.get("batch_size"), "gang_size": trace.meta.get("gang_size")},
    )


def evaluate_policy(workload: Workload, policy: ExecutionPolicy, fault_model: FaultModel,
                    freq: FrequencyPair = FrequencyPair(), epsilon: float = DEFAULT_EPSILON,
                    reliable=None, manifest_hash: str = "",
                    baseline_quality: Optional[float] = None) -> tuple[EvaluationReport, Trace]:
    trace = execute(workload, policy, fault_model, reliable)
    return report_from_trace(trace, workload, freq, epsilon, manifest_hash, baseline_quality), trace


def select_fittest(reports: Sequence[EvaluationReport]) -> EvaluationReport:
    """Lowest EEOP; ties go to lower overhead, then to the lexicographically first name."""
    if not reports:
        raise ValueError("no candidate reports")
    viable = [r for r in reports if not math.isinf(r.score.eeop)]
    if not viable:
        raise NoViableDetector("no viable detector: every candidate exceeds the overhead tolerance")
    return min(viable, key=lambda r: (r.score.eeop, r.score.overhead, r.detector))
