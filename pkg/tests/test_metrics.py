import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from symattn.metrics import ccc, evaluate, mae, report, rmse
from symattn.model import SYMPTOM_NAMES
from symattn.numkern import InvalidInputError

vec = hnp.arrays(np.float64, st.integers(2, 30), elements=st.floats(-100, 100))


def test_hand_examples():
    assert abs(rmse([3, 4], [0, 0]) - math.sqrt(12.5)) < 1e-12
    assert abs(mae([3, 4], [0, 0]) - 3.5) < 1e-12
    assert abs(ccc([0, 1, 2], [2, 3, 4]) - 0.25) < 1e-12
    assert rmse([1, 2], [1, 2]) == 0.0 and mae([1, 2], [1, 2]) == 0.0
    assert rmse([5.0], [2.0]) == mae([5.0], [2.0]) == 3.0


def test_ccc_degenerate_cases():
    assert ccc([1, 2, 3], [1, 2, 3]) == 1.0
    assert ccc([2, 2, 2], [1, 2, 3]) == 0.0
    assert ccc([2, 2], [2, 2]) == 1.0
    assert ccc([2, 2], [3, 3]) == 0.0


def test_errors():
    with pytest.raises(InvalidInputError):
        rmse([], [])
    with pytest.raises(InvalidInputError):
        mae([1, 2], [1])
    with pytest.raises(InvalidInputError):
        ccc([1.0], [1.0])


@settings(max_examples=300, deadline=None)
@given(data=st.data(), a=vec)
def test_ccc_properties(data, a):
    b = data.draw(hnp.arrays(np.float64, a.shape, elements=st.floats(-100, 100)))
    c = ccc(a, b)
    assert c == ccc(b, a)
    assert -1 - 1e-12 <= c <= 1 + 1e-12
    if np.ptp(a) > 1e-3 and np.ptp(b) > 1e-3:
        r = np.corrcoef(a, b)[0, 1]
        assert abs(c) <= abs(r) + 1e-12


@settings(max_examples=300, deadline=None)
@given(data=st.data(), t=vec, shift=st.floats(0.01, 50))
def test_shift_away_from_truth_mean_decreases_ccc(data, t, shift):
    assume(np.ptp(t) > 1e-2)
    p = data.draw(hnp.arrays(np.float64, t.shape, elements=st.floats(-100, 100)))
    assume(np.ptp(p) > 1e-2)
    p = p - p.mean() + t.mean()
    base = ccc(p, t)
    assume(abs(base) > 1e-6)
    assert abs(ccc(p + shift, t)) < abs(base)
    assert abs(ccc(p - shift, t)) < abs(base)


@settings(max_examples=300, deadline=None)
@given(data=st.data(), a=vec)
def test_rmse_at_least_mae(data, a):
    b = data.draw(hnp.arrays(np.float64, a.shape, elements=st.floats(-100, 100)))
    assert rmse(a, b) >= mae(a, b) - 1e-12 >= -1e-12


def test_report_layout_and_perfect_predictor():
    y = np.random.default_rng(0).integers(0, 4, (6, 8)).astype(float)
    rep = report(y, y, SYMPTOM_NAMES)
    assert [r["symptom"] for r in rep.per_symptom] == list(SYMPTOM_NAMES)
    assert rep.total == {"rmse": 0.0, "mae": 0.0, "ccc": 1.0}
    assert rep.n == 6
    assert "psychomotor" in rep.table()
    with pytest.raises(InvalidInputError):
        report(y[:, :7], y, SYMPTOM_NAMES)


def test_evaluate_requires_records():
    with pytest.raises(InvalidInputError):
        evaluate(None, [])
