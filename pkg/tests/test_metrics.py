import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sdc_sentinel.metrics import (ConfusionCounts, EmptyEvaluationError, confusion_rates, eeop,
                                  elementwise_relative_error, expected_error,
                                  missed_relative_error, psnr, relative_errors, score_detector)


def test_rates_match_table_row():
    r = confusion_rates(ConfusionCounts(tp=933, fn=67, fp=48, tn=952))
    assert r.tpr == pytest.approx(0.933)
    assert r.fpr == pytest.approx(0.048)
    assert r.tnr == pytest.approx(0.952)
    assert r.fnr == pytest.approx(0.067)


def test_rates_undefined_without_positives():
    r = confusion_rates(ConfusionCounts(tn=5, fp=1))
    assert r.tpr is None and r.fnr is None
    assert r.fpr == pytest.approx(1 / 6)


def test_empty_evaluation_is_an_error():
    with pytest.raises(EmptyEvaluationError):
        confusion_rates(ConfusionCounts())


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)


def test_from_outcomes_tally():
    c = ConfusionCounts.from_outcomes([True, True, False, False], [True, False, True, False])
    assert (c.tp, c.fn, c.fp, c.tn) == (1, 1, 1, 1)
    with pytest.raises(ValueError):
        ConfusionCounts.from_outcomes([True], [True, False])


def test_missed_relative_error_hand_value():
    assert missed_relative_error([([1.1], [1.0]), ([1.0], [1.0])]) == pytest.approx(0.05)
    assert missed_relative_error([]) == 0.0


def test_expected_error_product():
    assert expected_error(0.9332, 0.10) == pytest.approx(0.00668)
    assert expected_error(None, 0.5) == 0.0


def test_eeop_cutoff_and_product():
    assert eeop(0.01, 0.40, 0.33) == math.inf
    assert eeop(0.02, 0.10) == pytest.approx(0.002)
    # the cutoff is strict: overhead equal to epsilon is still admitted
    assert eeop(0.5, 0.33, 0.33) == pytest.approx(0.165)


def test_psnr_unit_offset():
    a = np.zeros((512, 512))
    assert psnr(a + 1.0, a) == pytest.approx(10 * math.log10(255.0 ** 2), abs=1e-12)
    assert psnr(a + 1.0, a) == pytest.approx(48.13, abs=5e-3)


def test_psnr_identical_is_infinite_and_validates():
    assert psnr([1.0, 2.0], [1.0, 2.0]) == math.inf
    with pytest.raises(ValueError):
        psnr([1.0], [1.0], peak=0)
    with pytest.raises(ValueError):
        psnr([], [])


def test_elementwise_relative_error_hand_value():
    assert elementwise_relative_error([3.0, 1.0], [2.0, 1.0]) == pytest.approx(0.25)


def test_relative_error_caps_and_nonfinite():
    err = relative_errors([np.nan, np.inf, 1e30, 1.0, np.inf], [1.0, 1.0, 1.0, 1.0, np.inf])
    assert err.tolist() == [1.0, 1.0, 1.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        relative_errors([1.0, 2.0], [1.0])


def test_score_detector_composes():
    s = score_detector(ConfusionCounts(tp=9, fn=1, fp=0, tn=90), [([2.0], [1.0])], 0.1)
    assert s.tpr == pytest.approx(0.9)
    assert s.mre == pytest.approx(1.0)
    assert s.ee == pytest.approx(0.1)
    assert s.eeop == pytest.approx(0.01)


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=20))
def test_relative_error_bounded(pairs):
    a, b = zip(*pairs)
    err = relative_errors(a, b)
    assert np.all((err >= 0) & (err <= 1.0))


@given(st.lists(finite, min_size=1, max_size=20))
def test_relative_error_zero_on_identity(xs):
    assert elementwise_relative_error(xs, xs) == 0.0


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_rates_complement(tp, fp, tn, fn):
    c = ConfusionCounts(tp, fp, tn, fn)
    if c.total == 0:
        return
    r = confusion_rates(c)
    if r.tpr is not None:
        assert r.tpr + r.fnr == pytest.approx(1.0)
    if r.fpr is not None:
        assert r.fpr + r.tnr == pytest.approx(1.0)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_eeop_monotone_in_overhead(ee, o1, o2):
    lo, hi = sorted((o1, o2))
    assert eeop(ee, lo) <= eeop(ee, hi)
