import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdc_sentinel.harness import (NONE, ORACLE, BaselineDetector, ExecutionPolicy, FaultModel,
                                  Trace, Verdict, batch_aggregate, bitwise_differs, detect,
                                  detection_cost, execute, execute_gang, run_unreliable,
                                  uses_intermediates)
from sdc_sentinel.kernels import dct, generate_inputs
from sdc_sentinel.perf import overhead
from sdc_sentinel.tasks import get_kind
from support import StubDetector, constant_detector


def bs_workload(n=2000, seed=0):
    return generate_inputs("blackscholes", "train", n, np.random.default_rng(seed))


def test_fault_model_validation_and_roundtrip():
    fm = FaultModel(1e-6, 4, 9, "output")
    assert FaultModel.from_dict(fm.to_dict()) == fm
    for bad in (dict(rate_per_cycle=-1), dict(rate_per_cycle=1.0), dict(max_bits_per_fault=0),
                dict(fault_site="register")):
        with pytest.raises(ValueError):
            FaultModel(**bad)


def test_policy_validation():
    with pytest.raises(ValueError):
        ExecutionPolicy(NONE, batch_size=0)
    with pytest.raises(ValueError):
        ExecutionPolicy(NONE, batch_size=8, gang_size=4)
    assert ExecutionPolicy(ORACLE).name == "oracle"
    assert ExecutionPolicy(constant_detector(8, True)).name == "ann:8,2"


def test_run_unreliable_rate_zero_and_certain():
    x = bs_workload(1).inputs[0]
    out, faulted = run_unreliable("blackscholes", x, FaultModel(0.0))
    assert not faulted
    assert out.view(np.uint32)[0] == get_kind("blackscholes").run(x).view(np.uint32)[0]
    hits = sum(run_unreliable("blackscholes", x, FaultModel(0.999999, rng_seed=s), t)[1]
               for s in range(10) for t in range(100))
    assert hits == 1000


def test_batch_aggregate():
    assert batch_aggregate([[0, 2], [2, 0]]).tolist() == [1.0, 1.0]
    assert batch_aggregate([[3.5, -1.0]]).tolist() == [3.5, -1.0]
    with pytest.raises(ValueError):
        batch_aggregate([])


@given(st.lists(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3), min_size=1, max_size=8),
       st.randoms())
def test_batch_aggregate_is_permutation_invariant(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    assert np.allclose(batch_aggregate(rows), batch_aggregate(shuffled), rtol=1e-12, atol=1e-6)
    same = [rows[0]] * len(rows)
    assert np.allclose(batch_aggregate(same), rows[0])


def test_detect_verdicts():
    fv = np.ones((2, 8))
    assert detect(ExecutionPolicy(ORACLE, 2), fv, [False, False]) is Verdict.CORRECT
    assert detect(ExecutionPolicy(ORACLE, 2), fv, [False, True]) is Verdict.INCORRECT
    assert detect(ExecutionPolicy(NONE), fv) is Verdict.CORRECT
    assert detect(ExecutionPolicy(constant_detector(8, True), 2), fv) is Verdict.INCORRECT
    with pytest.raises(ValueError):
        detect(ExecutionPolicy(ORACLE), fv)
    with pytest.raises(ValueError):
        detect(ExecutionPolicy(constant_detector(5, True)), fv)
    nan = np.full((1, 8), np.nan)
    assert detect(ExecutionPolicy(BaselineDetector()), nan) is Verdict.INCORRECT


def test_oracle_is_bitwise_exact():
    w = bs_workload(5000)
    fm = FaultModel(2e-5, rng_seed=3)
    tr = execute(w, ExecutionPolicy(ORACLE, 1, 512), fm)
    assert tr.faulted.sum() > 0
    assert tr.mismatches().size == 0
    assert np.array_equal(tr.final.view(np.uint32), tr.reliable.view(np.uint32))


def test_none_policy_rate_zero_costs_nothing():
    w = bs_workload(300)
    tr = execute(w, ExecutionPolicy(NONE), FaultModel(0.0))
    assert tr.totals()["detect"] == 0 and tr.totals()["correct"] == 0
    assert tr.mismatches().size == 0 and overhead(tr) == 0


def test_always_flag_stub_on_ten_task_gang():
    w = bs_workload(10)
    stub = StubDetector(lambda row: True, ops=50)
    final, tr = execute_gang("blackscholes", w.inputs, ExecutionPolicy(stub, 1, 16), FaultModel(1e-3))
    assert tr.reexecuted.all() and np.all(tr.verdict == 1)
    assert np.array_equal(final.view(np.uint32), tr.reliable.view(np.uint32))
    task_total = tr.cycles_task.sum()
    assert overhead(tr) == pytest.approx((10 * 50 + task_total) / task_total)


def test_batched_units_and_costs():
    w = bs_workload(10)
    stub = StubDetector(lambda row: row[7] > 1e9, ops=30)
    _, tr = execute_gang("blackscholes", w.inputs, ExecutionPolicy(stub, 4, 16), FaultModel(0.0))
    assert tr.unit.tolist() == [0, 0, 0, 0, 1, 1, 1, 1, 2, 2]
    # ops plus b*N aggregation, charged to the first task of each unit
    assert tr.cycles_detect.tolist() == [30 + 32, 0, 0, 0, 30 + 32, 0, 0, 0, 30 + 16, 0]
    assert detection_cost(stub, 8, 1) == 30
    assert detection_cost(ORACLE, 8, 4) == 0
    assert detection_cost(BaselineDetector(), 8, 1) == 80


def test_flagged_batch_reexecutes_every_member():
    w = bs_workload(12)
    flag_first = StubDetector(lambda row: False, ops=1)
    calls = []

    def fn(row):
        calls.append(1)
        return len(calls) == 2

    stub = StubDetector(fn, ops=1)
    _, tr = execute_gang("blackscholes", w.inputs, ExecutionPolicy(stub, 3, 12), FaultModel(0.0))
    assert tr.reexecuted.tolist() == [False] * 3 + [True] * 3 + [False] * 6
    assert tr.cycles_correct[3:6].tolist() == tr.cycles_task[3:6].tolist()
    _, tr2 = execute_gang("blackscholes", w.inputs, ExecutionPolicy(flag_first, 3, 12), FaultModel(0.0))
    assert not tr2.reexecuted.any()


def test_always_reliable_tasks_run_unchecked():
    w = dct.make_workload([np.random.default_rng(0).uniform(0, 255, (32, 32))])
    tr = execute(w, ExecutionPolicy(ORACLE, 1), FaultModel(1e-3, rng_seed=1))
    rel = tr.always_reliable
    assert rel.sum() == 16
    assert np.all(tr.unit[rel] == -1) and np.all(tr.verdict[rel] == -1)
    assert not tr.faulted[rel].any()


def test_gang_boundaries_do_not_change_faults():
    w = bs_workload(3000)
    fm = FaultModel(1e-5, rng_seed=8)
    a = execute(w, ExecutionPolicy(NONE, 1, 3000), fm)
    b = execute(w, ExecutionPolicy(NONE, 1, 128), fm)
    assert np.array_equal(a.observed.view(np.uint32), b.observed.view(np.uint32))


def test_fault_sites_choice():
    kind = get_kind("dct")
    assert uses_intermediates(kind, FaultModel())
    assert not uses_intermediates(kind, FaultModel(fault_site="output"))
    with pytest.raises(ValueError):
        uses_intermediates(get_kind("sobel"), FaultModel(fault_site="intermediate"))


def test_intermediate_faults_follow_linear_propagation():
    rng = np.random.default_rng(5)
    w = dct.make_workload([rng.uniform(0, 255, (16, 16))])
    x = w.inputs[5:6]
    rel = get_kind("dct").run_batch(x)
    for site, op in ((3 * 10 + 1, 1), (192 * 2 + 3 * 63 + 2, 2), (192 * 7 + 0, 0)):
        out = rel.copy()
        mask = np.array([1 << 30], np.uint32)
        dct._apply_site_faults(x, out, np.array([0]), np.array([site]), mask)
        coef = site // 192
        changed = np.flatnonzero(out[0].view(np.uint32) != rel[0].view(np.uint32))
        assert set(changed) <= {coef}
        # recompute the corrupted coefficient by direct summation with the flipped value
        s = int(x[0, 67])
        r0, c0 = dct.sub_block_offsets(s)
        u, v = r0 + coef // 4, c0 + coef % 4
        term = (site % 192) // 3
        block = x[0, :64].reshape(8, 8)
        terms = [dct.BASIS[u, px] * block[px, py] * dct.BASIS[v, py] for px in range(8) for py in range(8)]
        px, py = divmod(term, 8)
        first = np.float32(dct.BASIS[u, px] * block[px, py])
        if op == 0:
            bad = (first.view(np.uint32) ^ mask[0]).view(np.float32)
            delta = float(bad) * dct.BASIS[v, py] - float(first) * dct.BASIS[v, py]
        elif op == 1:
            p = np.float32(terms[term])
            delta = float((p.view(np.uint32) ^ mask[0]).view(np.float32)) - float(p)
        else:
            p = np.float32(sum(terms[:term + 1]))
            delta = float((p.view(np.uint32) ^ mask[0]).view(np.float32)) - float(p)
        expect = np.float32(float(rel[0, coef]) + delta)
        assert out[0, coef] == pytest.approx(expect, rel=1e-6, abs=1e-6)


def test_trace_records_and_ndjson(tmp_path):
    w = bs_workload(50)
    tr = execute(w, ExecutionPolicy(ORACLE, 2, 16), FaultModel(1e-4, rng_seed=2))
    recs = list(tr.records())
    assert len(recs) == 50
    assert sum(r.cycles_task + r.cycles_detect + r.cycles_correct for r in recs) == pytest.approx(
        tr.totals()["total"])
    path = tmp_path / "t.ndjson"
    tr.write_ndjson(path)
    lines = path.read_text().splitlines()
    assert len(lines) == 50
    first = json.loads(lines[0])
    assert first["task_index"] == 0 and first["detector_verdict"] in ("Correct", "Incorrect")
    assert len(first["observed_output"]) == 1


def test_trace_concat_renumbers_units():
    w = bs_workload(10)
    _, a = execute_gang("blackscholes", w.inputs[:5], ExecutionPolicy(NONE, 2, 8), FaultModel(0.0))
    _, b = execute_gang("blackscholes", w.inputs[5:], ExecutionPolicy(NONE, 2, 8), FaultModel(0.0), 5)
    cat = Trace.concat([a, b])
    assert cat.unit.tolist() == [0, 0, 1, 1, 2, 3, 3, 4, 4, 5]
    with pytest.raises(ValueError):
        Trace.concat([])


def test_gang_size_enforced():
    w = bs_workload(10)
    with pytest.raises(ValueError):
        execute_gang("blackscholes", w.inputs, ExecutionPolicy(NONE, 1, 4), FaultModel())
    with pytest.raises(ValueError):
        execute_gang("blackscholes", w.inputs[:0], ExecutionPolicy(NONE, 1, 4), FaultModel())


def test_baseline_flags_gross_outliers():
    w = bs_workload(4000)
    tr = execute(w, ExecutionPolicy(BaselineDetector(), 1), FaultModel(5e-5, rng_seed=4))
    nonfinite = ~np.all(np.isfinite(tr.observed), axis=1)
    assert np.all(tr.verdict[nonfinite] == 1)
    assert np.all(tr.verdict[:256][~nonfinite[:256]] == 0)  # warm-up


def test_bitwise_differs_nan_payloads():
    a = np.array([[np.nan]], np.float32)
    b = a.copy()
    b.view(np.uint32)[0, 0] ^= 1
    assert bitwise_differs(a, b).tolist() == [True]
    assert bitwise_differs(a, a.copy()).tolist() == [False]


@settings(max_examples=25)
@given(st.integers(0, 2**31), st.sampled_from([1, 2, 4, 7]), st.floats(1e-6, 3e-5))
def test_harness_invariants(seed, batch, rate):
    w = bs_workload(600, seed % 7)
    fm = FaultModel(rate, rng_seed=seed)
    stub = StubDetector(lambda row: not np.isfinite(row).all() or abs(row[7]) > 80, ops=20)
    none = execute(w, ExecutionPolicy(NONE, batch, 256), fm)
    tr = execute(w, ExecutionPolicy(stub, batch, 256), fm)
    # same fault outcome across policies
    assert np.array_equal(tr.faulted, none.faulted)
    # correction soundness
    inc = tr.verdict == 1
    assert not bitwise_differs(tr.final[inc], tr.reliable[inc]).any()
    # monotone quality
    assert set(tr.mismatches()) <= set(none.mismatches())
    # ledger conservation and correction only where flagged
    t = tr.totals()
    assert t["total"] == pytest.approx(t["task"] + t["detect"] + t["correct"])
    assert np.all(tr.cycles_correct[~tr.reexecuted] == 0)
    # batch granularity
    for u in np.unique(tr.unit[tr.unit >= 0]):
        members = tr.unit == u
        assert tr.reexecuted[members].all() or not tr.reexecuted[members].any()
