"""Synthesizes Incorrect feature vectors from correct ones and builds balanced epoch sets."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterator, Optional

import numpy as np

from .metrics import relative_errors

STRATEGIES = ("bitflip", "scale_noise", "additive_noise")
MAX_ATTEMPTS = 64


class PerturbationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PerturbationParams:
    strategy_weights: dict = field(
        default_factory=lambda: {"bitflip": 0.6, "scale_noise": 0.2, "additive_noise": 0.2}
    )
    max_bits_flipped: int = 8
    min_deviation: float = 0.01
    # None means every feature position may be corrupted
    perturbable_indices: Optional[tuple] = None
    max_elements: int = 2
    scale_exponent_max: float = 3.0
    # |u| >= log10(2): a factor of at least 2 either way
    scale_exponent_gap: float = 0.30103
    # additive steps of 10**U(min, max) training-set standard deviations
    additive_min_decades: float = 0.0
    additive_max_decades: float = 1.0

    def __post_init__(self):
        unknown = set(self.strategy_weights) - set(STRATEGIES)
        if unknown:
            raise ValueError(f"unknown perturbation strategies: {sorted(unknown)}")
        weights = [float(self.strategy_weights.get(s, 0.0)) for s in STRATEGIES]
        if min(weights) < 0 or abs(sum(weights) - 1.0) > 1e-9:
            raise ValueError("strategy_weights must be non-negative and sum to 1")
        if not self.min_deviation > 0:
            raise ValueError("min_deviation must be > 0")
        if not 1 <= self.max_bits_flipped <= 32:
            raise ValueError("max_bits_flipped must be in 1..32")
        if self.max_elements < 1:
            raise ValueError("max_elements must be >= 1")
        if self.perturbable_indices is not None:
            object.__setattr__(self, "perturbable_indices",
                               tuple(int(i) for i in self.perturbable_indices))
            if len(self.perturbable_indices) == 0:
                raise ValueError("perturbable_indices must not be empty")
        if not 0 <= self.scale_exponent_gap < self.scale_exponent_max:
            raise ValueError("scale exponent gap must lie below its maximum")
        if not self.additive_min_decades <= self.additive_max_decades:
            raise ValueError("additive_min_decades must not exceed additive_max_decades")

    @property
    def weight_vector(self) -> np.ndarray:
        return np.array([float(self.strategy_weights.get(s, 0.0)) for s in STRATEGIES])

    def indices_for(self, dim: int) -> np.ndarray:
        if self.perturbable_indices is None:
            return np.arange(dim)
        idx = np.asarray(self.perturbable_indices, dtype=np.intp)
        if idx.min() < 0 or idx.max() >= dim:
            raise ValueError(f"perturbable index out of range for dimension {dim}")
        return idx

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy_weights"] = {s: float(self.strategy_weights.get(s, 0.0)) for s in STRATEGIES}
        d["perturbable_indices"] = (None if self.perturbable_indices is None
                                    else list(self.perturbable_indices))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationParams":
        d = dict(d)
        if d.get("perturbable_indices") is not None:
            d["perturbable_indices"] = tuple(d["perturbable_indices"])
        return cls(**d)


def flip_bits(value: float, bits) -> np.float32:
    """Flip the given bit positions (0 = mantissa LSB, 31 = sign) of a float32."""
    word = np.array([value], dtype=np.float32).view(np.uint32)
    mask = 0
    for b in bits:
        mask |= 1 << int(b)
    word ^= np.uint32(mask)
    return word.view(np.float32)[0]


def _noise_scale(x: np.ndarray, scale: Optional[np.ndarray]) -> np.ndarray:
    mag = np.maximum(np.abs(np.nan_to_num(x, nan=1.0, posinf=1.0, neginf=1.0)), 1.0)
    if scale is None:
        return mag
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), x.shape)
    return np.where(scale > 0, scale, mag)


def _perturb_once(x: np.ndarray, params: PerturbationParams, rng: np.random.Generator,
                  noise_scale: Optional[np.ndarray]) -> np.ndarray:
    n, dim = x.shape
    idx = params.indices_for(dim)
    m_max = min(params.max_elements, idx.size)
    m = rng.integers(1, m_max + 1, size=n)
    order = np.argsort(rng.random((n, idx.size)), axis=1)
    chosen = np.zeros((n, dim), dtype=bool)
    ranks = np.arange(idx.size)[None, :] < m[:, None]
    rows = np.repeat(np.arange(n), idx.size).reshape(n, idx.size)
    chosen[rows[ranks], idx[order][ranks]] = True

    r_idx, c_idx = np.nonzero(chosen)
    k = r_idx.size
    strategy = rng.choice(len(STRATEGIES), size=k, p=params.weight_vector)
    out = x.copy()
    vals = out[r_idx, c_idx].astype(np.float32)

    # bit flips in the float32 encoding
    nbits = rng.integers(1, params.max_bits_flipped + 1, size=k)
    perm = np.argsort(rng.random((k, 32)), axis=1).astype(np.uint64)
    take = np.arange(32)[None, :] < nbits[:, None]
    masks = np.where(take, np.left_shift(np.uint64(1), perm), np.uint64(0)).sum(axis=1)
    flipped = (vals.view(np.uint32) ^ masks.astype(np.uint32)).view(np.float32)

    # multiplicative factor 10**u, |u| in [gap, max]
    span = params.scale_exponent_max - params.scale_exponent_gap
    u = (params.scale_exponent_gap + span * rng.random(k)) * rng.choice([-1.0, 1.0], size=k)
    # additive noise in noise-scale units
    step = (10.0 ** rng.uniform(params.additive_min_decades, params.additive_max_decades, size=k)
            * rng.choice([-1.0, 1.0], size=k))
    scale = _noise_scale(x, noise_scale)[r_idx, c_idx]

    with np.errstate(over="ignore", invalid="ignore"):
        scaled = (vals.astype(np.float64) * 10.0 ** u).astype(np.float32)
        shifted = (vals.astype(np.float64) + step * scale).astype(np.float32)
    new = np.select([strategy == 0, strategy == 1], [flipped, scaled], shifted)
    out[r_idx, c_idx] = new
    return out


def perturb_many(x, params: PerturbationParams, rng: np.random.Generator,
                 noise_scale=None) -> np.ndarray:
    """Perturb every row of ``x``; each result deviates from its source by at least tau."""
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ValueError("expected a non-empty 2-D array of feature vectors")
    out = np.empty_like(x)
    pending = np.arange(x.shape[0])
    scale = None if noise_scale is None else np.asarray(noise_scale, dtype=np.float64)
    for _ in range(MAX_ATTEMPTS):
        if pending.size == 0:
            break
        src = x[pending]
        cand = _perturb_once(src, params, rng, scale)
        dev = relative_errors(cand, src).reshape(src.shape).mean(axis=1)
        ok = dev >= params.min_deviation
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
    if pending.size:
        raise PerturbationError(
            f"could not reach min_deviation={params.min_deviation} for {pending.size} "
            f"vector(s) within {MAX_ATTEMPTS} attempts"
        )
    return out


def perturb(fv, params: PerturbationParams, rng: np.random.Generator, noise_scale=None) -> np.ndarray:
    fv = np.asarray(fv, dtype=np.float32)
    if fv.ndim != 1 or fv.size == 0:
        raise ValueError("feature vector must be a non-empty 1-D array")
    return perturb_many(fv[None, :], params, rng, noise_scale)[0]


@dataclass
class EpochSet:
    features: np.ndarray
    labels: np.ndarray  # 0 = Correct, 1 = Incorrect

    def __len__(self) -> int:
        return self.labels.size

    def __iter__(self) -> Iterator[tuple]:
        return iter(zip(self.features, self.labels.tolist()))


def balanced_epoch_set(correct_set, params: PerturbationParams, rng: np.random.Generator,
                       noise_scale=None) -> EpochSet:
    """Every correct vector labeled Correct plus one fresh perturbation of it labeled Incorrect."""
    correct = np.asarray(correct_set, dtype=np.float32)
    if correct.ndim != 2 or correct.shape[0] == 0:
        raise ValueError("correct_set must be a non-empty list of feature vectors")
    if noise_scale is None:
        noise_scale = np.nanstd(correct.astype(np.float64), axis=0)
    bad = perturb_many(correct, params, rng, noise_scale)
    features = np.concatenate([correct, bad])
    labels = np.concatenate([np.zeros(len(correct), np.int8), np.ones(len(bad), np.int8)])
    order = rng.permutation(labels.size)
    return EpochSet(features[order], labels[order])
