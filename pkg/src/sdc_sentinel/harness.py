"""Gang execution under injected bit-flip faults, with detection and reliable re-execution.

Every task draws its faults from a counter-based stream keyed by
``(fault seed, global task index)``, so the fault outcome of a task does not
depend on gang size, batch size or which detector is running. Runs with the
same :class:`FaultModel` therefore see identical corruptions and can be
compared task by task.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

from . import backend
from .metrics import ConfusionCounts, relative_errors
from .mlp import DetectorModel
from .tasks import TaskKind, Workload, get_kind

DEFAULT_GANG_SIZE = 4096
# per dimension: z-test (sub, div, abs, compare) plus a Welford update (6 ops)
BASELINE_OPS_PER_DIM = 10


class Verdict(Enum):
    CORRECT = "Correct"
    INCORRECT = "Incorrect"
    NOT_CHECKED = "NotChecked"


_VERDICT_CODES = {-1: Verdict.NOT_CHECKED, 0: Verdict.CORRECT, 1: Verdict.INCORRECT}


FAULT_SITES = ("auto", "output", "intermediate")


@dataclass(frozen=True)
class FaultModel:
    """Poisson fault arrivals per cycle, each flipping 1..max_bits bits of one value.

    ``fault_site`` picks the corrupted values: "output" elements, the kind's
    instrumented "intermediate" values, or "auto" (intermediates when the kind
    has them).
    """

    rate_per_cycle: float = 1e-7
    max_bits_per_fault: int = 8
    rng_seed: int = 0
    fault_site: str = "auto"

    def __post_init__(self):
        if not 0.0 <= self.rate_per_cycle < 1.0:
            raise ValueError("rate_per_cycle must lie in [0, 1)")
        if not 1 <= self.max_bits_per_fault <= 32:
            raise ValueError("max_bits_per_fault must lie in 1..32")
        if self.fault_site not in FAULT_SITES:
            raise ValueError(f"fault_site must be one of {FAULT_SITES}")

    def to_dict(self) -> dict:
        return {"rate_per_cycle": self.rate_per_cycle,
                "max_bits_per_fault": self.max_bits_per_fault, "rng_seed": self.rng_seed,
                "fault_site": self.fault_site}

    @classmethod
    def from_dict(cls, d: dict) -> "FaultModel":
        return cls(float(d["rate_per_cycle"]), int(d["max_bits_per_fault"]), int(d["rng_seed"]),
                   str(d.get("fault_site", "auto")))


# ---------------------------------------------------------------------------
# detectors other than trained networks

class Oracle:
    """Flags a unit exactly when one of its tasks was corrupted; costs nothing."""

    name = "oracle"


class NoDetector:
    """Accepts every output."""

    name = "none"


@dataclass(frozen=True)
class BaselineDetector:
    """Running per-dimension z-score test, a simple stand-in for outlier-based detectors.

    Units are flagged when any dimension deviates more than ``threshold``
    standard deviations from the running mean (non-finite values always do).
    Nothing is flagged during the first ``warmup`` observations. Statistics are
    updated with the value that is finally accepted: the observed features when
    passed, the re-executed ones when flagged.
    """

    threshold: float = 4.0
    warmup: int = 256
    name: str = "baseline"

    def op_count(self, dim: int) -> int:
        return BASELINE_OPS_PER_DIM * dim


ORACLE = Oracle()
NONE = NoDetector()


def detector_name(detector) -> str:
    if isinstance(detector, DetectorModel):
        return "ann:" + detector.name
    return getattr(detector, "name", type(detector).__name__)


def detection_cost(detector, dim: int, batch: int) -> float:
    """Cycles charged per detection unit (batch aggregation costs ``batch * dim``)."""
    if isinstance(detector, (Oracle, NoDetector)):
        return 0.0
    if isinstance(detector, BaselineDetector):
        ops = detector.op_count(dim)
    else:
        ops = detector.op_count()
    return float(ops + (batch * dim if batch > 1 else 0))


@dataclass(frozen=True)
class ExecutionPolicy:
    detector: object = NONE
    batch_size: int = 1
    gang_size: int = DEFAULT_GANG_SIZE

    def __post_init__(self):
        if self.batch_size < 1 or self.gang_size < 1:
            raise ValueError("batch_size and gang_size must be positive")
        if self.batch_size > self.gang_size:
            raise ValueError("batch_size must not exceed gang_size")

    @property
    def name(self) -> str:
        return detector_name(self.detector)


# ---------------------------------------------------------------------------
# single tasks

def uses_intermediates(kind: TaskKind, fault_model: FaultModel) -> bool:
    has = kind.fault_sites > 0 and kind.apply_site_faults is not None
    if fault_model.fault_site == "intermediate" and not has:
        raise ValueError(f"task kind {kind.name} has no instrumented intermediates")
    return has and fault_model.fault_site != "output"


def _inject(kind: TaskKind, inputs, outputs, eligible, task_ids, fault_model: FaultModel):
    args = (
        np.ascontiguousarray(kind.cost_batch(inputs), dtype=np.float64),
        np.ascontiguousarray(eligible, dtype=np.uint8),
        np.ascontiguousarray(task_ids, dtype=np.int64),
        int(fault_model.rng_seed), float(fault_model.rate_per_cycle),
        int(fault_model.max_bits_per_fault),
    )
    observed = np.ascontiguousarray(outputs, dtype=np.float32).copy()
    if uses_intermediates(kind, fault_model):
        counts, rows, sites, masks = backend.draw_faults(*args, kind.fault_sites)
        if rows.size:
            kind.apply_site_faults(inputs, observed, rows, sites, masks)
    else:
        counts = backend.inject_faults(observed, *args)
    return observed, np.asarray(counts)


def bitwise_differs(a, b) -> np.ndarray:
    """Per-row flag: any element's 32-bit encoding differs."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    return np.any(a.view(np.uint32) != b.view(np.uint32), axis=1)


def run_unreliable(kind, task_input, fault_model: FaultModel, task_index: int = 0):
    """Run one task under the fault model: ``(observed output, faulted)``.

    ``task_index`` selects the task's fault stream.
    """
    kind = get_kind(kind) if isinstance(kind, str) else kind
    x = np.asarray(task_input, dtype=np.float64)[None, :]
    reliable = kind.run_batch(x)
    observed, _ = _inject(kind, x, reliable, [True], [task_index], fault_model)
    return observed[0], bool(bitwise_differs(observed, reliable)[0])


# ---------------------------------------------------------------------------
# detection

def batch_aggregate(fvs) -> np.ndarray:
    """Elementwise mean of equal-length feature vectors."""
    x = np.asarray(fvs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("batch_aggregate needs a non-empty list of equal-length vectors")
    return x.mean(axis=0)


class _BaselineState:
    def __init__(self, cfg: BaselineDetector, dim: int):
        self.cfg = cfg
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def check(self, fv: np.ndarray) -> bool:
        if not np.all(np.isfinite(fv)):
            return True
        if self.n < self.cfg.warmup:
            return False
        std = np.sqrt(self.m2 / (self.n - 1))
        dev = np.abs(fv - self.mean)
        with np.errstate(divide="ignore", invalid="ignore"):
            # a dimension that never varied flags any change at all
            z = np.where(std > 0, dev / std, np.where(dev > 0, np.inf, 0.0))
        return bool(np.any(z > self.cfg.threshold))

    def update(self, fv: np.ndarray) -> None:
        if not np.all(np.isfinite(fv)):
            return
        self.n += 1
        delta = fv - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (fv - self.mean)


def _flag_units(detector, agg: np.ndarray, truth: np.ndarray, reliable_agg: np.ndarray,
                state: Optional[_BaselineState]) -> np.ndarray:
    if isinstance(detector, Oracle):
        return truth.copy()
    if isinstance(detector, NoDetector):
        return np.zeros(len(truth), dtype=bool)
    if isinstance(detector, BaselineDetector):
        flagged = np.zeros(len(truth), dtype=bool)
        for i in range(len(truth)):
            flagged[i] = state.check(agg[i])
            state.update(reliable_agg[i] if flagged[i] else agg[i])
        return flagged
    return np.asarray(detector.classify_batch(agg.astype(np.float32)), dtype=bool)


def detect(policy: ExecutionPolicy, feature_batch, faulted=None, state=None) -> Verdict:
    """Verdict for one detection unit.

    The oracle needs the per-task ``faulted`` flags; the baseline detector keeps
    running statistics in ``state`` (a fresh one is used when omitted).
    """
    x = np.asarray(feature_batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("feature batch must be a non-empty list of equal-length vectors")
    d = policy.detector
    if isinstance(d, Oracle):
        if faulted is None:
            raise ValueError("the oracle needs the faulted flags")
        truth = bool(np.any(faulted))
        return Verdict.INCORRECT if truth else Verdict.CORRECT
    if isinstance(d, NoDetector):
        return Verdict.CORRECT
    agg = x[0] if x.shape[0] == 1 else batch_aggregate(x)
    if isinstance(d, BaselineDetector):
        state = state or _BaselineState(d, agg.size)
        flagged = state.check(agg)
        if not flagged:
            state.update(agg)
        return Verdict.INCORRECT if flagged else Verdict.CORRECT
    if isinstance(d, DetectorModel) and agg.size != d.input_dim:
        raise ValueError(f"detector expects {d.input_dim} features, got {agg.size}")
    flagged = bool(np.asarray(d.classify_batch(agg[None, :].astype(np.float32)))[0])
    return Verdict.INCORRECT if flagged else Verdict.CORRECT


# ---------------------------------------------------------------------------
# execution traces

@dataclass
class TaskRecord:
    task_index: int
    input: np.ndarray
    reliable_output: np.ndarray
    observed_output: np.ndarray
    faulted: bool
    detector_verdict: Verdict
    reexecuted: bool
    cycles_task: float
    cycles_detect: float
    cycles_correct: float
    always_reliable: bool = False
    unit: int = -1

    def to_dict(self, outputs: bool = True) -> dict:
        d = {
            "task_index": self.task_index,
            "faulted": self.faulted,
            "detector_verdict": self.detector_verdict.value,
            "reexecuted": self.reexecuted,
            "always_reliable": self.always_reliable,
            "unit": self.unit,
            "cycles_task": self.cycles_task,
            "cycles_detect": self.cycles_detect,
            "cycles_correct": self.cycles_correct,
        }
        if outputs:
            d["input"] = _json_floats(self.input)
            d["reliable_output"] = _json_floats(self.reliable_output)
            d["observed_output"] = _json_floats(self.observed_output)
        return d


def _json_floats(values) -> list:
    out = []
    for v in np.asarray(values).ravel().tolist():
        out.append(v if math.isfinite(v) else ("nan" if v != v else ("inf" if v > 0 else "-inf")))
    return out


@dataclass
class Trace:
    """Columnar record of one run: row ``i`` is the task with global index ``i``."""

    kind: str
    policy: str
    inputs: np.ndarray
    reliable: np.ndarray
    observed: np.ndarray
    final: np.ndarray
    fault_counts: np.ndarray
    faulted: np.ndarray
    always_reliable: np.ndarray
    verdict: np.ndarray  # -1 not checked, 0 correct, 1 incorrect
    reexecuted: np.ndarray
    unit: np.ndarray  # detection unit id, -1 for unchecked tasks
    cycles_task: np.ndarray
    cycles_detect: np.ndarray
    cycles_correct: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def record(self, i: int) -> TaskRecord:
        return TaskRecord(
            task_index=i,
            input=self.inputs[i],
            reliable_output=self.reliable[i],
            observed_output=self.observed[i],
            faulted=bool(self.faulted[i]),
            detector_verdict=_VERDICT_CODES[int(self.verdict[i])],
            reexecuted=bool(self.reexecuted[i]),
            cycles_task=float(self.cycles_task[i]),
            cycles_detect=float(self.cycles_detect[i]),
            cycles_correct=float(self.cycles_correct[i]),
            always_reliable=bool(self.always_reliable[i]),
            unit=int(self.unit[i]),
        )

    def records(self) -> Iterator[TaskRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @property
    def reliable_total_cycles(self) -> float:
        return float(self.cycles_task.sum())

    def totals(self) -> dict:
        task = float(self.cycles_task.sum())
        return {
            "task": task,
            "task_unreliable": float(self.cycles_task[~self.always_reliable].sum()),
            "task_always_reliable": float(self.cycles_task[self.always_reliable].sum()),
            "detect": float(self.cycles_detect.sum()),
            "correct": float(self.cycles_correct.sum()),
            "total": task + float(self.cycles_detect.sum()) + float(self.cycles_correct.sum()),
        }

    def mismatches(self) -> np.ndarray:
        """Indices of tasks whose final output differs bitwise from the reliable one."""
        return np.flatnonzero(bitwise_differs(self.final, self.reliable))

    def unit_outcomes(self) -> tuple[np.ndarray, np.ndarray]:
        """``(truth, flagged)`` per detection unit; truth = some task in the unit was corrupted."""
        checked = self.unit >= 0
        if not np.any(checked):
            return np.zeros(0, bool), np.zeros(0, bool)
        units = self.unit[checked]
        n_units = int(units.max()) + 1
        truth = np.zeros(n_units, dtype=bool)
        np.logical_or.at(truth, units, self.faulted[checked])
        flagged = np.zeros(n_units, dtype=bool)
        flagged[units] = self.verdict[checked] == 1
        return truth, flagged

    def confusion(self) -> ConfusionCounts:
        truth, flagged = self.unit_outcomes()
        return ConfusionCounts.from_outcomes(truth, flagged)

    def missed_mre(self) -> float:
        """Mean relative error over corrupted tasks inside false-negative units."""
        checked = self.unit >= 0
        truth, flagged = self.unit_outcomes()
        fn_unit = np.zeros(len(self), dtype=bool)
        fn_unit[checked] = (truth & ~flagged)[self.unit[checked]]
        sel = fn_unit & self.faulted
        if not np.any(sel):
            return 0.0
        err = relative_errors(self.observed[sel], self.reliable[sel]).reshape(int(sel.sum()), -1)
        return float(err.mean(axis=1).mean())

    def write_ndjson(self, path, outputs: bool = True) -> None:
        """One JSON TaskRecord per line, written atomically."""
        path = os.fspath(path)
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)), suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                for rec in self.records():
                    fh.write(json.dumps(rec.to_dict(outputs), separators=(",", ":")))
                    fh.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def concat(cls, parts: Sequence["Trace"]) -> "Trace":
        if not parts:
            raise ValueError("nothing to concatenate")
        first = parts[0]
        unit_offset = 0
        units = []
        for p in parts:
            u = p.unit.copy()
            u[u >= 0] += unit_offset
            if np.any(p.unit >= 0):
                unit_offset = int(u.max()) + 1
            units.append(u)
        cat = {name: np.concatenate([getattr(p, name) for p in parts]) for name in (
            "inputs", "reliable", "observed", "final", "fault_counts", "faulted",
            "always_reliable", "verdict", "reexecuted", "cycles_task", "cycles_detect",
            "cycles_correct")}
        return cls(kind=first.kind, policy=first.policy, unit=np.concatenate(units),
                   meta=dict(first.meta), **cat)


# ---------------------------------------------------------------------------
# gangs

def execute_gang(kind, inputs, policy: ExecutionPolicy, fault_model: FaultModel,
                 task_offset: int = 0, reliable=None, state=None) -> tuple[np.ndarray, Trace]:
    """Run one gang and return ``(final outputs, trace)``.

    Tasks the kind marks always-reliable run unchecked and uncorrupted. The
    rest run under the fault model; once the whole gang has finished, the
    checked tasks are split in order into detection units of
    ``policy.batch_size`` and every task of a flagged unit is re-executed.
    ``reliable`` may carry precomputed reliable outputs for these inputs.
    """
    kind = get_kind(kind) if isinstance(kind, str) else kind
    x = np.asarray(inputs, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise ValueError("a gang needs at least one task")
    if n > policy.gang_size:
        raise ValueError(f"gang of {n} tasks exceeds gang_size {policy.gang_size}")
    task_ids = np.arange(task_offset, task_offset + n, dtype=np.int64)
    rel = kind.run_batch(x) if reliable is None else np.asarray(reliable, dtype=np.float32)
    always = np.asarray(kind.reliable_batch(task_ids, x), dtype=bool)
    observed, counts = _inject(kind, x, rel, ~always, task_ids, fault_model)
    faulted = bitwise_differs(observed, rel)
    cost = np.asarray(kind.cost_batch(x), dtype=np.float64)

    checked = np.flatnonzero(~always)
    b = policy.batch_size
    unit = np.full(n, -1, dtype=np.int64)
    unit[checked] = np.arange(checked.size) // b
    n_units = -(-checked.size // b)
    verdict = np.full(n, -1, dtype=np.int8)
    detect_cycles = np.zeros(n)
    correct_cycles = np.zeros(n)
    reexec = np.zeros(n, dtype=bool)
    final = observed.copy()

    if n_units:
        truth = np.zeros(n_units, dtype=bool)
        np.logical_or.at(truth, unit[checked], faulted[checked])
        needs_features = not isinstance(policy.detector, (Oracle, NoDetector))
        if needs_features:
            with np.errstate(invalid="ignore"):
                feats = kind.features_batch(x[checked], observed[checked]).astype(np.float64)
            rel_feats = kind.features_batch(x[checked], rel[checked]).astype(np.float64)
            agg = _unit_means(feats, unit[checked], n_units)
            rel_agg = _unit_means(rel_feats, unit[checked], n_units)
            dim = feats.shape[1]
            if isinstance(policy.detector, DetectorModel) and dim != policy.detector.input_dim:
                raise ValueError(
                    f"detector expects {policy.detector.input_dim} features, kind {kind.name} "
                    f"produces {dim}")
            if isinstance(policy.detector, BaselineDetector) and state is None:
                state = _BaselineState(policy.detector, dim)
        else:
            agg = rel_agg = np.zeros((n_units, 0))
            dim = kind.feature_dim
        flagged = _flag_units(policy.detector, agg, truth, rel_agg, state)
        verdict[checked] = flagged[unit[checked]].astype(np.int8)
        reexec[checked] = flagged[unit[checked]]
        # detection cost is charged to the first task of each unit
        firsts = checked[::b]
        unit_sizes = np.minimum(b, checked.size - np.arange(n_units) * b)
        detect_cycles[firsts] = [detection_cost(policy.detector, dim, int(s)) for s in unit_sizes]
        correct_cycles[reexec] = cost[reexec]
        final[reexec] = rel[reexec]

    trace = Trace(
        kind=kind.name, policy=policy.name, inputs=x, reliable=np.asarray(rel, dtype=np.float32),
        observed=observed, final=final, fault_counts=counts, faulted=faulted,
        always_reliable=always, verdict=verdict, reexecuted=reexec, unit=unit,
        cycles_task=cost, cycles_detect=detect_cycles, cycles_correct=correct_cycles,
    )
    return final, trace


def _unit_means(feats: np.ndarray, units: np.ndarray, n_units: int) -> np.ndarray:
    sums = np.zeros((n_units, feats.shape[1]))
    np.add.at(sums, units, feats)
    sizes = np.bincount(units, minlength=n_units).astype(np.float64)
    with np.errstate(invalid="ignore"):
        return sums / sizes[:, None]


def execute(workload: Workload, policy: ExecutionPolicy, fault_model: FaultModel,
            reliable=None) -> Trace:
    """Run a whole workload gang by gang and return the merged trace."""
    kind = get_kind(workload.kind)
    x = workload.inputs
    rel = kind.run_batch(x) if reliable is None else np.asarray(reliable, dtype=np.float32)
    state = None
    if isinstance(policy.detector, BaselineDetector):
        state = _BaselineState(policy.detector, kind.feature_dim)
    parts = []
    for start in range(0, len(workload), policy.gang_size):
        stop = min(start + policy.gang_size, len(workload))
        _, part = execute_gang(kind, x[start:stop], policy, fault_model, start,
                               rel[start:stop], state)
        parts.append(part)
    trace = Trace.concat(parts)
    trace.meta.update({"batch_size": policy.batch_size, "gang_size": policy.gang_size,
                       "fault_model": fault_model.to_dict()})
    return trace


def reliable_outputs(workload: Workload) -> np.ndarray:
    return get_kind(workload.kind).run_batch(workload.inputs)
