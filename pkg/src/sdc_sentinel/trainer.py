"""Profile splitting, ticket-based early stopping and per-architecture training."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .archs import ArchitectureSpec, synthesize
from .augment import PerturbationParams, balanced_epoch_set
from .mlp import DetectorModel, Network, TrainConfig, apply_update
from .seeding import derive_seed

log = logging.getLogger(__name__)

F32_MAX = float(np.finfo(np.float32).max)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ProfileDataset:
    task_kind: str
    vectors: np.ndarray
    dim_names: Optional[list] = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValueError("profile vectors must form a 2-D array")

    @property
    def feature_dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class TicketState:
    tickets: int
    best_test_loss: float = math.inf
    epoch: int = 0
    prev_test_loss: float = math.inf

    @property
    def exhausted(self) -> bool:
        return self.tickets <= 0


def ticket_update(state: TicketState, test_loss: float, cap: int = 100) -> TicketState:
    """+1 ticket (capped) when test loss dropped below the previous epoch's, else -2.

    The first epoch has no predecessor to improve on and pays -2.
    """
    improved = state.epoch > 0 and test_loss < state.prev_test_loss
    tickets = min(state.tickets + 1, cap) if improved else state.tickets - 2
    return TicketState(
        tickets=tickets,
        best_test_loss=min(state.best_test_loss, test_loss),
        epoch=state.epoch + 1,
        prev_test_loss=test_loss,
    )


def run_tickets(losses, initial: int = 100, cap: int = 100) -> list[TicketState]:
    """Feed a scripted loss sequence through the heuristic until tickets run out."""
    state = TicketState(initial)
    history = []
    for value in losses:
        state = ticket_update(state, value, cap)
        history.append(state)
        if state.exhausted:
            break
    return history


def split_profile(profile: ProfileDataset, ratio: float = 0.9, rng: Optional[np.random.Generator] = None):
    n = len(profile)
    if n < 10:
        raise ValueError(f"profile needs at least 10 vectors, got {n}")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    rng = rng if rng is not None else np.random.default_rng(0)
    order = rng.permutation(n)
    cut = min(math.ceil(ratio * n), n - 1)
    return order[:cut], order[cut:]


@dataclass
class TrainResult:
    model: DetectorModel
    log: list = field(default_factory=list)  # (epoch, train_loss, test_loss, tickets)


def train_detector(
    arch: ArchitectureSpec,
    train_set,
    test_set,
    config: TrainConfig,
    params: PerturbationParams,
    metadata: Optional[dict] = None,
    on_epoch: Optional[Callable] = None,
) -> TrainResult:
    """Train one detector; returns the snapshot with the lowest test loss."""
    train = np.asarray(train_set, dtype=np.float32)
    test = np.asarray(test_set, dtype=np.float32)
    if train.ndim != 2 or train.shape[1] != arch.input_dim or test.shape[1:] != train.shape[1:]:
        raise ValueError(f"feature dimension does not match architecture {arch.name}")
    init_rng = np.random.default_rng(derive_seed(config.rng_seed, "init"))
    train_aug_rng = np.random.default_rng(derive_seed(config.rng_seed, "augment-train"))
    test_aug_rng = np.random.default_rng(derive_seed(config.rng_seed, "augment-test"))
    order_rng = np.random.default_rng(derive_seed(config.rng_seed, "minibatch"))

    with np.errstate(invalid="ignore"):
        t64 = train.astype(np.float64)
    t64[~np.isfinite(t64)] = np.nan
    mean = np.nan_to_num(np.nanmean(t64, axis=0))
    std = np.nan_to_num(np.nanstd(t64, axis=0))
    net = Network.initialize(arch, mean, std, init_rng)
    velocity = [np.zeros_like(p) for p in net.params]

    state = TicketState(config.initial_tickets)
    best = net.copy()
    history = []
    train_epoch = test_epoch = None
    bs = config.minibatch_size
    while not state.exhausted and state.epoch < config.max_epochs:
        if state.epoch % config.augment_period_epochs == 0:
            train_epoch = balanced_epoch_set(train, params, train_aug_rng, std)
            test_epoch = balanced_epoch_set(test, params, test_aug_rng, std)
            # corrupted features may hold signalling NaNs; widening them is expected
            with np.errstate(invalid="ignore"):
                x_tr = train_epoch.features.astype(np.float64)
                x_te = test_epoch.features.astype(np.float64)
            y_tr = train_epoch.labels.astype(np.intp)
            y_te = test_epoch.labels.astype(np.intp)
        perm = order_rng.permutation(y_tr.size)
        total = 0.0
        for start in range(0, perm.size, bs):
            sel = perm[start:start + bs]
            value, grads = net.loss_and_gradients(x_tr[sel], y_tr[sel])
            total += value * sel.size
            for v, g in zip(velocity, grads):
                v *= config.momentum
                v -= config.learning_rate * g
            apply_update(net, velocity)
        train_loss = total / perm.size
        test_loss = net.mean_loss(x_te, y_te)
        # the frozen model is float32, so weights beyond its range count as divergence too
        if not (math.isfinite(train_loss) and math.isfinite(test_loss)
                and all(np.all(np.abs(p) <= F32_MAX) for p in net.params)):
            raise TrainingDiverged(f"training diverged for {arch.name} at epoch {state.epoch}")
        if test_loss < state.best_test_loss:
            best = net.copy()
        state = ticket_update(state, test_loss, config.ticket_cap)
        history.append((state.epoch, train_loss, test_loss, state.tickets))
        if on_epoch is not None:
            on_epoch(state, train_loss, test_loss)

    meta = {
        "architecture": arch.name,
        "feature_dim": arch.input_dim,
        "training_seed": config.rng_seed,
        "epochs": state.epoch,
        "best_test_loss": state.best_test_loss,
        "train_config": asdict(config),
        "perturbation": params.to_dict(),
    }
    meta.update(metadata or {})
    return TrainResult(best.to_model(meta), history)


def _train_one(job):
    arch, train, test, config, params, metadata = job
    return train_detector(arch, train, test, config, params, metadata)


def worker_count(default: int | None = None) -> int:
    env = os.environ.get("SDC_SENTINEL_THREADS")
    if env:
        return max(1, int(env))
    return default or (os.cpu_count() or 1)


def train_all(
    profile: ProfileDataset,
    config: TrainConfig,
    params: PerturbationParams,
    archs: Optional[list] = None,
    workers: Optional[int] = None,
    split_ratio: float = 0.9,
    errors: str = "raise",
) -> list:
    """One trained detector per candidate architecture.

    With ``errors="collect"`` a failed architecture yields its exception in
    place of a TrainResult instead of aborting the others.
    """
    archs = archs or synthesize(profile.feature_dim)
    split_rng = np.random.default_rng(derive_seed(config.rng_seed, "split"))
    tr_idx, te_idx = split_profile(profile, split_ratio, split_rng)
    train, test = profile.vectors[tr_idx], profile.vectors[te_idx]
    jobs = []
    for arch in archs:
        cfg = replace(config, rng_seed=derive_seed(config.rng_seed, "arch", arch.name))
        meta = {"task_kind": profile.task_kind, "master_seed": config.rng_seed}
        jobs.append((arch, train, test, cfg, params, meta))
    workers = min(workers or worker_count(), len(jobs))

    def guarded(fn, job):
        try:
            return fn(job)
        except Exception as exc:  # noqa: BLE001
            if errors == "raise":
                raise
            log.warning("training %s failed: %s", job[0].name, exc)
            return exc

    if workers <= 1:
        return [guarded(_train_one, job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_train_one, job) for job in jobs]
        out = []
        for job, fut in zip(jobs, futures):
            out.append(guarded(lambda _j, f=fut: f.result(), job))
        return out
