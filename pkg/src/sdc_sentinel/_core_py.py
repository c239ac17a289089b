"""Pure-numpy implementation of the hot kernels.

Mirrors ``_core.pyx`` operation for operation so both backends produce
bit-identical logits and fault outcomes.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
KEY_SALT = 0xD1B54A32D192ED03
MAX_FAULTS_PER_TASK = 64
INV_2_53 = 1.0 / 9007199254740992.0

BACKEND = "python"


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def stream_key(seed: int, task_id: int) -> int:
    return mix64((mix64((seed ^ KEY_SALT) & MASK64) + (task_id & MASK64)) & MASK64)


def stream_uniform(key: int, counter: int) -> float:
    word = mix64((key + (counter + 1) * GOLDEN) & MASK64)
    return (word >> 11) * INV_2_53


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def _first_uniforms(seed: int, task_ids: np.ndarray) -> np.ndarray:
    base = np.uint64(mix64((seed ^ KEY_SALT) & MASK64))
    keys = _mix64_vec(base + task_ids.astype(np.uint64))
    words = _mix64_vec(keys + np.uint64(GOLDEN))
    return (words >> np.uint64(11)).astype(np.float64) * INV_2_53


def poisson_count(u: float, lam: float) -> int:
    """Inverse-CDF Poisson draw, capped at MAX_FAULTS_PER_TASK."""
    k = 0
    p = math.exp(-lam)
    cdf = p
    while u > cdf and k < MAX_FAULTS_PER_TASK:
        k += 1
        p = p * lam / k
        cdf = cdf + p
    return k


def _fault_events(key: int, k: int, n_sites: int, max_bits: int) -> list:
    """``k`` (site, xor mask) pairs drawn from one task's stream (counters 1, 2, ...)."""
    counter = 1
    pool = list(range(32))
    events = []
    for _ in range(k):
        site = int(stream_uniform(key, counter) * n_sites)
        counter += 1
        if site >= n_sites:
            site = n_sites - 1
        nbits = 1 + int(stream_uniform(key, counter) * max_bits)
        counter += 1
        if nbits > max_bits:
            nbits = max_bits
        mask = 0
        # partial Fisher-Yates: nbits distinct bit positions
        for j in range(nbits):
            r = j + int(stream_uniform(key, counter) * (32 - j))
            counter += 1
            if r > 31:
                r = 31
            pool[j], pool[r] = pool[r], pool[j]
            mask |= 1 << pool[j]
        events.append((site, mask))
    return events


def _poisson_hits(costs, eligible, task_ids, seed, rate):
    """Per-task fault counts; only tasks whose first uniform clears P(0) take the slow path."""
    n = len(task_ids)
    counts = np.zeros(n, dtype=np.int32)
    if rate <= 0.0 or n == 0:
        return counts
    idx = np.flatnonzero(np.asarray(eligible, dtype=bool))
    if idx.size == 0:
        return counts
    task_ids = np.asarray(task_ids, dtype=np.int64)
    lam = np.asarray(costs, dtype=np.float64)[idx] * rate
    u = _first_uniforms(seed, task_ids[idx])
    p0 = np.empty_like(lam)
    for value in np.unique(lam):
        p0[lam == value] = math.exp(-float(value))
    hit = u > p0
    for t, ui, li in zip(idx[hit], u[hit], lam[hit]):
        counts[t] = poisson_count(float(ui), float(li))
    return counts


def draw_faults(costs, eligible, task_ids, seed, rate, max_bits, n_sites):
    """Fault events without applying them.

    Returns ``(counts, task, site, mask)``: per-task fault counts plus one row
    per fault, ordered by task. Uses the same stream layout as inject_faults
    with ``n_sites`` in place of the output length.
    """
    seed = int(seed) & MASK64
    max_bits = min(int(max_bits), 32)
    task_ids = np.asarray(task_ids, dtype=np.int64)
    counts = _poisson_hits(costs, eligible, task_ids, seed, rate)
    tasks, sites, masks = [], [], []
    for t in np.flatnonzero(counts):
        for site, mask in _fault_events(stream_key(seed, int(task_ids[t])), int(counts[t]),
                                        int(n_sites), max_bits):
            tasks.append(t)
            sites.append(site)
            masks.append(mask)
    return (counts, np.array(tasks, dtype=np.int64), np.array(sites, dtype=np.int64),
            np.array(masks, dtype=np.uint32))


def inject_faults(outputs, costs, eligible, task_ids, seed, rate, max_bits):
    """Corrupt ``outputs`` (float32, n x L) in place; return per-task fault counts."""
    counts, tasks, sites, masks = draw_faults(
        costs, eligible, task_ids, seed, rate, max_bits, outputs.shape[1])
    bits = outputs.view(np.uint32)
    for t, site, mask in zip(tasks, sites, masks):
        bits[t, site] ^= mask
    return counts


def mlp_forward(x, mean, std, clip, weights, biases, relu_after):
    """Float32 inference over a batch of feature vectors (n x N) -> logits (n x 2)."""
    x = np.asarray(x, dtype=np.float32)
    with np.errstate(invalid="ignore", over="ignore"):
        h = (x - mean) / std
    clip = np.float32(clip)
    h = np.where(np.isnan(h), clip, h)
    h = np.minimum(np.maximum(h, -clip), clip)
    for w, b, relu in zip(weights, biases, relu_after):
        acc = np.empty((h.shape[0], w.shape[0]), dtype=np.float32)
        acc[:] = b
        for i in range(w.shape[1]):
            acc += h[:, i:i + 1] * w[:, i]
        if relu:
            acc = np.where(acc > 0, acc, np.float32(0.0))
        h = acc
    return h
