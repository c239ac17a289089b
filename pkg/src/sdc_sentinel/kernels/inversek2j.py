"""Closed-form inverse kinematics of a planar two-link arm (elbow angle in [0, pi])."""

from __future__ import annotations

import math

import numpy as np

from ..metrics import elementwise_relative_error
from ..tasks import TaskKind, Workload, never_reliable, register

L1 = 0.5
L2 = 0.5
TRANSCENDENTAL_COST = 20
# x^2+y^2 (3), law-of-cosines scaling (2), clamp (2), k1 (2), k2 (1), final subtract (1),
# plus acos, sin and two atan2 calls
TASK_COST = 11 + 4 * TRANSCENDENTAL_COST
DIM_NAMES = ("x", "y", "theta1", "theta2")

# reach radii per profile; angles cover the full circle
RANGES = {
    "train": {"radius": (0.1, 0.8)},
    "validation": {"radius": (0.8, 0.98)},
}


class UnreachableTarget(ValueError):
    pass


def _solve(x, y, l1=L1, l2=L2):
    r2 = x * x + y * y
    c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)
    c2 = np.clip(c2, -1.0, 1.0)
    theta2 = np.arccos(c2)
    s2 = np.sin(theta2)
    theta1 = np.arctan2(y, x) - np.arctan2(l2 * s2, l1 + l2 * c2)
    return theta1, theta2


def _check_reach(x, y, l1, l2, tol=1e-12):
    r = np.hypot(x, y)
    if np.any(r > l1 + l2 + tol) or np.any(r < abs(l1 - l2) - tol):
        raise UnreachableTarget("target outside the arm's reachable annulus")


def inversek2j_task(x: float, y: float, l1: float = L1, l2: float = L2) -> tuple:
    _check_reach(np.float64(x), np.float64(y), l1, l2)
    t1, t2 = _solve(np.float64(x), np.float64(y), l1, l2)
    return float(t1), float(t2)


def forward_kinematics(theta1, theta2, l1: float = L1, l2: float = L2) -> tuple:
    x = l1 * np.cos(theta1) + l2 * np.cos(theta1 + theta2)
    y = l1 * np.sin(theta1) + l2 * np.sin(theta1 + theta2)
    return x, y


def _run_batch(inputs: np.ndarray) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    _check_reach(x[:, 0], x[:, 1], L1, L2)
    t1, t2 = _solve(x[:, 0], x[:, 1])
    return np.column_stack([t1, t2]).astype(np.float32)


def _features(inputs: np.ndarray, outputs: np.ndarray) -> np.ndarray:
    feats = np.empty((inputs.shape[0], 4), dtype=np.float32)
    feats[:, :2] = inputs[:, :2]
    feats[:, 2:] = outputs
    return feats


def _cost(inputs: np.ndarray) -> np.ndarray:
    return np.full(inputs.shape[0], float(TASK_COST))


def _quality(workload: Workload, outputs, reliable) -> float:
    return elementwise_relative_error(outputs, reliable)


def generate(range_profile: str, count: int, rng: np.random.Generator) -> Workload:
    lo, hi = RANGES[range_profile]["radius"]
    r = rng.uniform(lo, hi, count)
    phi = rng.uniform(-math.pi, math.pi, count)
    x = np.column_stack([r * np.cos(phi), r * np.sin(phi)])
    return Workload("inversek2j", x.astype(np.float32).astype(np.float64))


KIND = register(TaskKind(
    name="inversek2j",
    input_len=2,
    output_len=2,
    dim_names=DIM_NAMES,
    run_batch=_run_batch,
    features_batch=_features,
    cost_batch=_cost,
    reliable_batch=never_reliable,
    perturbable_indices=(2, 3),
    quality_kind="mean_relative_error",
    quality=_quality,
    description="joint angles of a two-link arm for one target point",
))
