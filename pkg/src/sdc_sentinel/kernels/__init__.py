"""Benchmark task kinds: DCT, Black-Scholes, Sobel and two-link inverse kinematics."""

from __future__ import annotations

import numpy as np

from ..tasks import Workload, get_kind
from . import blackscholes, dct, inversek2j, sobel
from .blackscholes import blackscholes_task
from .dct import dct_quality_pipeline, dct_task
from .inversek2j import inversek2j_task
from .sobel import sobel_task

IMAGE_KINDS = ("dct", "sobel")
_MODULES = {"dct": dct, "sobel": sobel, "blackscholes": blackscholes, "inversek2j": inversek2j}


def generate_inputs(kind: str, range_profile: str, count: int, rng: np.random.Generator,
                    image_paths=None, allow_synthetic: bool = True,
                    image_size: int = 512) -> Workload:
    """Seeded workload for one profile.

    ``count`` is a number of images for dct/sobel and of tasks otherwise.
    """
    if range_profile not in ("train", "validation"):
        raise ValueError("range_profile must be 'train' or 'validation'")
    if count <= 0:
        raise ValueError("count must be positive")
    module = _MODULES[get_kind(kind).name]
    if kind in IMAGE_KINDS:
        return module.generate(range_profile, count, rng, image_paths, allow_synthetic, image_size)
    return module.generate(range_profile, count, rng)


def cycle_cost(kind: str, task_input) -> float:
    return get_kind(kind).cycle_cost(task_input)


__all__ = [
    "generate_inputs", "cycle_cost", "dct_task", "dct_quality_pipeline", "blackscholes_task",
    "sobel_task", "inversek2j_task", "IMAGE_KINDS",
]
