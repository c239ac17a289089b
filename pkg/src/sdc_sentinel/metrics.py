"""Detector evaluation metrics and application quality metrics.

A detection unit is "positive" when the detector flags it as Incorrect.
Rates whose denominator is zero are reported as ``None`` ("undefined").
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

DEFAULT_EPSILON = 0.33
RELATIVE_ERROR_FLOOR = 1e-12
# Per-element relative errors saturate here; non-finite deviations count as the cap.
RELATIVE_ERROR_CAP = 1.0


class EmptyEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @classmethod
    def from_outcomes(cls, truth: Iterable[bool], flagged: Iterable[bool]) -> "ConfusionCounts":
        """Tally (actually_incorrect, flagged_incorrect) pairs."""
        t = np.asarray(list(truth) if not isinstance(truth, np.ndarray) else truth, dtype=bool)
        f = np.asarray(list(flagged) if not isinstance(flagged, np.ndarray) else flagged, dtype=bool)
        if t.shape != f.shape:
            raise ValueError("truth and verdict arrays differ in length")
        return cls(
            tp=int(np.sum(t & f)),
            fp=int(np.sum(~t & f)),
            tn=int(np.sum(~t & ~f)),
            fn=int(np.sum(t & ~f)),
        )


@dataclass(frozen=True)
class Rates:
    tpr: Optional[float]
    fpr: Optional[float]
    tnr: Optional[float]
    fnr: Optional[float]


@dataclass(frozen=True)
class DetectorScore:
    tpr: Optional[float]
    fpr: Optional[float]
    tnr: Optional[float]
    fnr: Optional[float]
    mre: float
    ee: float
    overhead: float
    eeop: float

    def to_dict(self) -> dict:
        return {
            "tpr": self.tpr,
            "fpr": self.fpr,
            "tnr": self.tnr,
            "fnr": self.fnr,
            "mre": self.mre,
            "ee": self.ee,
            "overhead": self.overhead,
            "eeop": self.eeop,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorScore":
        return cls(**{k: (None if d[k] is None else float(d[k])) for k in
                      ("tpr", "fpr", "tnr", "fnr")},
                   mre=float(d["mre"]), ee=float(d["ee"]),
                   overhead=float(d["overhead"]), eeop=float(d["eeop"]))


@dataclass(frozen=True)
class QualityReport:
    metric_kind: str  # "psnr_db" or "mean_relative_error"
    value: float
    baseline_value: float

    def to_dict(self) -> dict:
        return {"metric_kind": self.metric_kind, "value": self.value,
                "baseline_value": self.baseline_value}

    @classmethod
    def from_dict(cls, d: dict) -> "QualityReport":
        return cls(d["metric_kind"], float(d["value"]), float(d["baseline_value"]))


def _ratio(num: int, den: int) -> Optional[float]:
    return None if den == 0 else num / den


def confusion_rates(counts: ConfusionCounts) -> Rates:
    if counts.total == 0:
        raise EmptyEvaluationError("empty evaluation")
    return Rates(
        tpr=_ratio(counts.tp, counts.tp + counts.fn),
        fpr=_ratio(counts.fp, counts.fp + counts.tn),
        tnr=_ratio(counts.tn, counts.tn + counts.fp),
        fnr=_ratio(counts.fn, counts.fn + counts.tp),
    )


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    # widening a signalling NaN (a possible bit-flip result) raises a spurious warning
    with np.errstate(invalid="ignore"):
        a = np.asarray(a, dtype=np.float64).ravel()
        b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    return a, b


def relative_errors(a, b) -> np.ndarray:
    """Per-element ``|a-b| / max(|b|, floor)``, capped at RELATIVE_ERROR_CAP."""
    a, b = _pair(a, b)
    with np.errstate(invalid="ignore", over="ignore"):
        err = np.abs(a - b) / np.maximum(np.abs(b), RELATIVE_ERROR_FLOOR)
    # identical values (including matching infinities) carry no error
    same = (a == b) | (np.isnan(a) & np.isnan(b))
    err = np.where(same, 0.0, err)
    err = np.where(np.isfinite(err), err, RELATIVE_ERROR_CAP)
    return np.minimum(err, RELATIVE_ERROR_CAP)


def elementwise_relative_error(a, b) -> float:
    err = relative_errors(a, b)
    if err.size == 0:
        return 0.0
    return float(err.mean())


def missed_relative_error(fn_pairs: Sequence[tuple]) -> float:
    """Mean relative error over the outputs of false-negative tasks."""
    if len(fn_pairs) == 0:
        return 0.0
    return float(np.mean([elementwise_relative_error(c, r) for c, r in fn_pairs]))


def expected_error(tpr: Optional[float], mre: float) -> float:
    # undefined TPR means no positives existed, hence nothing was missed
    if tpr is None:
        return 0.0
    return (1.0 - tpr) * mre


def eeop(ee: float, overhead: float, epsilon: float = DEFAULT_EPSILON) -> float:
    if overhead > epsilon:
        return math.inf
    return ee * overhead


def psnr(signal_a, signal_b, peak: float = 255.0) -> float:
    if peak <= 0:
        raise ValueError("peak must be positive")
    a, b = _pair(signal_a, signal_b)
    if a.size == 0:
        raise ValueError("empty signals")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def score_detector(
    counts: ConfusionCounts,
    fn_pairs: Sequence[tuple],
    overhead: float,
    epsilon: float = DEFAULT_EPSILON,
) -> DetectorScore:
    rates = confusion_rates(counts)
    mre = missed_relative_error(fn_pairs)
    ee = expected_error(rates.tpr, mre)
    return DetectorScore(
        tpr=rates.tpr, fpr=rates.fpr, tnr=rates.tnr, fnr=rates.fnr,
        mre=mre, ee=ee, overhead=overhead, eeop=eeop(ee, overhead, epsilon),
    )
