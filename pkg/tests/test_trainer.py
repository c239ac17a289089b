import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdc_sentinel.archs import ArchitectureSpec
from sdc_sentinel.augment import PerturbationParams, balanced_epoch_set
from sdc_sentinel.mlp import TrainConfig
from sdc_sentinel.trainer import (ProfileDataset, TicketState, TrainingDiverged, run_tickets,
                                  split_profile, ticket_update, train_all, train_detector,
                                  worker_count)


def test_ticket_rules():
    s = TicketState(100, epoch=3, prev_test_loss=2.0)
    assert ticket_update(s, 1.0).tickets == 100  # improved, capped
    assert ticket_update(s, 2.0).tickets == 98  # equal is not an improvement
    assert ticket_update(TicketState(50, epoch=1, prev_test_loss=2.0), 1.0).tickets == 51


def test_first_epoch_pays():
    assert ticket_update(TicketState(100), 0.1).tickets == 98


@pytest.mark.parametrize("losses", [[1.0] * 500, [float(i) for i in range(500)], [math.inf] * 500])
def test_never_improving_stops_after_fifty(losses):
    history = run_tickets(losses)
    assert len(history) == 50 and history[-1].exhausted


def test_improving_sequence_never_exceeds_cap():
    history = run_tickets([1.0 / (i + 1) for i in range(300)])
    assert max(h.tickets for h in history) == 100
    assert not history[-1].exhausted


@given(st.lists(st.floats(0, 10, allow_nan=False), max_size=3000))
def test_oscillating_losses_terminate(losses):
    # repeated with alternating order so half the epochs fail to improve
    seq = [x for l in losses for x in (l, l + 1.0)] + [5.0] * 1000
    history = run_tickets(seq)
    assert len(history) <= 10 * 100 * 10
    assert all(h.tickets <= 100 for h in history)


def test_split_profile_proportions():
    prof = ProfileDataset("x", np.zeros((100, 3)))
    tr, te = split_profile(prof, 0.9, np.random.default_rng(0))
    assert (tr.size, te.size) == (90, 10)
    assert set(tr).isdisjoint(te) and len(set(tr) | set(te)) == 100
    with pytest.raises(ValueError):
        split_profile(ProfileDataset("x", np.zeros((5, 3))))
    with pytest.raises(ValueError):
        split_profile(prof, 1.0)


def _toy_profile(n=400, seed=0):
    rng = np.random.default_rng(seed)
    base = np.array([1.0, 2.0, 3.0, 4.0])
    return base + rng.normal(scale=0.01, size=(n, 4))


def test_separable_toy_problem_is_learned():
    data = _toy_profile()
    params = PerturbationParams(strategy_weights={"bitflip": 0.0, "scale_noise": 1.0,
                                                  "additive_noise": 0.0})
    cfg = TrainConfig(max_epochs=30, rng_seed=4)
    res = train_detector(ArchitectureSpec.parse("4,8,2"), data[:360], data[360:], cfg, params)
    fresh = balanced_epoch_set(_toy_profile(200, seed=7), params, np.random.default_rng(11))
    pred = res.model.classify_batch(fresh.features)
    assert np.mean(pred == fresh.labels.astype(bool)) >= 0.95
    assert res.model.metadata["architecture"] == "4,8,2"
    assert [row[0] for row in res.log] == list(range(1, len(res.log) + 1))


def test_training_is_deterministic():
    data = _toy_profile(200)
    params = PerturbationParams()
    cfg = TrainConfig(max_epochs=6, rng_seed=1)
    arch = ArchitectureSpec.parse("4,4,2")
    a = train_detector(arch, data[:180], data[180:], cfg, params)
    b = train_detector(arch, data[:180], data[180:], cfg, params)
    assert all(np.array_equal(x, y) for x, y in zip(a.model.weights, b.model.weights))
    assert a.log == b.log


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        train_detector(ArchitectureSpec.parse("5,2"), np.zeros((20, 4)), np.zeros((5, 4)),
                       TrainConfig(max_epochs=1), PerturbationParams())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    data = _toy_profile(100)
    cfg = TrainConfig(learning_rate=1e30, momentum=0.0, max_epochs=5)
    with pytest.raises(TrainingDiverged):
        train_detector(ArchitectureSpec.parse("4,16,4,2"), data[:90] * 1e6, data[90:] * 1e6, cfg,
                       PerturbationParams())


def test_train_all_names_and_isolation(monkeypatch):
    prof = ProfileDataset("dct", np.random.default_rng(0).normal(size=(60, 10)))
    out = train_all(prof, TrainConfig(max_epochs=2), PerturbationParams(), workers=1)
    names = [r.model.name for r in out]
    assert names == ["10,2", "10,4,2", "10,8,2", "10,16,2", "10,4,4,2", "10,8,4,2", "10,16,4,2"]
    assert all(r.model.metadata["feature_dim"] == 10 for r in out)

    import sdc_sentinel.trainer as trainer

    real = trainer._train_one

    def flaky(job):
        if job[0].name == "10,8,2":
            raise TrainingDiverged("boom")
        return real(job)

    monkeypatch.setattr(trainer, "_train_one", flaky)
    mixed = train_all(prof, TrainConfig(max_epochs=1), PerturbationParams(), workers=1,
                      errors="collect")
    assert isinstance(mixed[2], TrainingDiverged)
    assert sum(isinstance(r, Exception) for r in mixed) == 1


def test_parallel_training_matches_serial():
    prof = ProfileDataset("x", np.random.default_rng(3).normal(size=(40, 4)))
    cfg = TrainConfig(max_epochs=2)
    serial = train_all(prof, cfg, PerturbationParams(), workers=1)
    parallel = train_all(prof, cfg, PerturbationParams(), workers=2)
    for a, b in zip(serial, parallel):
        assert all(np.array_equal(x, y) for x, y in zip(a.model.weights, b.model.weights))


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("SDC_SENTINEL_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("SDC_SENTINEL_THREADS", "0")
    assert worker_count() == 1
