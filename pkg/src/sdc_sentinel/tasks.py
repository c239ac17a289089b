"""Task kinds: batched reference kernels plus feature extraction and cost models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


@dataclass
class Workload:
    """A batch of task inputs (one row per task) plus whatever the quality metric needs."""

    kind: str
    inputs: np.ndarray
    context: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.inputs.shape[0]


@dataclass(frozen=True)
class TaskKind:
    name: str
    input_len: int
    output_len: int
    dim_names: tuple
    run_batch: Callable[[np.ndarray], np.ndarray]
    features_batch: Callable[[np.ndarray, np.ndarray], np.ndarray]
    cost_batch: Callable[[np.ndarray], np.ndarray]
    reliable_batch: Callable[[np.ndarray, np.ndarray], np.ndarray]
    perturbable_indices: tuple
    quality_kind: str  # "psnr_db" or "mean_relative_error"
    quality: Callable[[Workload, np.ndarray, np.ndarray], float]
    description: str = ""
    # Optional instrumented intermediates: ``fault_sites`` values per task, and a
    # function (inputs, outputs, task_rows, sites, masks) that flips the given
    # bits of those intermediates and propagates the result into ``outputs``.
    fault_sites: int = 0
    apply_site_faults: Optional[Callable] = None

    @property
    def feature_dim(self) -> int:
        return len(self.dim_names)

    # single-task views over the batched callables

    def run(self, task_input) -> np.ndarray:
        return self.run_batch(np.asarray(task_input, dtype=np.float64)[None, :])[0]

    def feature_of(self, task_input, output) -> np.ndarray:
        x = np.asarray(task_input, dtype=np.float64)[None, :]
        y = np.asarray(output, dtype=np.float32)[None, :]
        return self.features_batch(x, y)[0]

    def cycle_cost(self, task_input) -> float:
        return float(self.cost_batch(np.asarray(task_input, dtype=np.float64)[None, :])[0])

    def always_reliable(self, index: int, task_input) -> bool:
        x = np.asarray(task_input, dtype=np.float64)[None, :]
        return bool(self.reliable_batch(np.array([index]), x)[0])


_REGISTRY: dict = {}


def register(kind: TaskKind) -> TaskKind:
    _REGISTRY[kind.name] = kind
    return kind


def get_kind(name: str) -> TaskKind:
    from . import kernels  # noqa: F401  (registers the built-in kinds)

    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown task kind {name!r}; known: {sorted(_REGISTRY)}") from None


def kind_names() -> list:
    from . import kernels  # noqa: F401

    return sorted(_REGISTRY)


def never_reliable(indices, inputs) -> np.ndarray:
    return np.zeros(len(indices), dtype=bool)


def constant_cost(value: float) -> Callable[[np.ndarray], np.ndarray]:
    def cost(inputs: np.ndarray) -> np.ndarray:
        return np.full(inputs.shape[0], float(value))

    return cost
