import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from symattn import numkern as nk
from symattn.gradcheck import compare, numeric_grad

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def fd_check(loss, x, analytic, tol=1e-6):
    num = numeric_grad(loss, x, h=1e-5)
    rel, _ = compare(analytic, num, abs_floor=1e-8)
    assert rel < tol


# ---------------------------------------------------------------- forward examples


def test_matmul_identity():
    out = nk.matmul([[1, 0], [0, 1]], [[5, 6], [7, 8]])
    np.testing.assert_array_equal(out, [[5, 6], [7, 8]])


def test_matmul_row_times_column():
    assert nk.matmul([[1, 2]], [[3], [4]]).tolist() == [[11.0]]


def test_matmul_empty_inner_dimension():
    out = nk.matmul(np.zeros((1, 0)), np.zeros((0, 1)))
    assert out.tolist() == [[0.0]]


def test_matmul_shape_error_names_shapes():
    with pytest.raises(nk.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nk.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_matches_numpy():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 4))
    np.testing.assert_allclose(nk.matmul(a, b), a @ b, rtol=1e-13)


def test_softmax_uniform():
    out, _ = nk.softmax_temp([0, 0, 0], 1.0)
    np.testing.assert_allclose(out, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_ln2():
    out, _ = nk.softmax_temp([math.log(2), 0], 1.0)
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_large_tau_flattens():
    out, _ = nk.softmax_temp([10, 0], 1000.0)
    # direct evaluation: e^0.01 / (e^0.01 + 1)
    expected = math.exp(0.01) / (math.exp(0.01) + 1)
    np.testing.assert_allclose(out, [expected, 1 - expected], atol=1e-15)
    assert round(out[0], 4) == 0.5025


def test_softmax_mask_and_errors():
    out, _ = nk.softmax_temp([1.0, 2.0, 3.0], 1.0, [True, False, True])
    assert out[1] == 0.0
    assert abs(out.sum() - 1) < 1e-12
    with pytest.raises(nk.InvalidInputError):
        nk.softmax_temp([1.0, 2.0], 1.0, [False, False])
    with pytest.raises(nk.DomainError):
        nk.softmax_temp([1.0, 2.0], 0.0)
    with pytest.raises(nk.DomainError):
        nk.softmax_temp([1.0, 2.0], -1.0)


def test_softmax_small_tau_is_stable():
    out, _ = nk.softmax_temp([1000.0, 999.0], 1e-3)
    assert np.all(np.isfinite(out))
    assert out[0] == 1.0


@settings(max_examples=200, deadline=None)
@given(
    z=hnp.arrays(np.float64, st.integers(1, 12), elements=finite),
    log_tau=st.floats(math.log(1e-3), math.log(1e3)),
    data=st.data(),
)
def test_softmax_is_a_distribution(z, log_tau, data):
    mask = data.draw(hnp.arrays(np.bool_, z.shape))
    mask[data.draw(st.integers(0, z.size - 1))] = True
    out, _ = nk.softmax_temp(z, math.exp(log_tau), mask)
    assert np.all(out >= 0)
    assert np.all(out[~mask] == 0.0)
    assert abs(out[mask].sum() - 1.0) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(z=hnp.arrays(np.float64, st.integers(2, 10), elements=finite, unique=True))
def test_softmax_max_non_increasing_in_tau(z):
    taus = np.geomspace(1e-3, 1e3, 40)
    peaks = [nk.softmax_temp(z, t)[0].max() for t in taus]
    assert all(b <= a + 1e-15 for a, b in zip(peaks, peaks[1:]))


def test_layernorm_example():
    out, _ = nk.layernorm([1.0, 3.0], np.ones(2), np.zeros(2), eps=0.0)
    np.testing.assert_allclose(out, [-1.0, 1.0], atol=1e-15)


def test_layernorm_constant_input_gives_bias():
    bias = np.array([0.5, -2.0, 3.0])
    out, _ = nk.layernorm([4.0, 4.0, 4.0], np.array([2.0, 3.0, 4.0]), bias)
    np.testing.assert_array_equal(out, bias)


def test_layernorm_zero_gain_gives_bias():
    bias = np.array([1.0, 2.0, 3.0])
    out, _ = nk.layernorm([9.0, -1.0, 0.3], np.zeros(3), bias)
    np.testing.assert_array_equal(out, bias)


@settings(max_examples=200, deadline=None)
@given(x=hnp.arrays(np.float64, st.integers(2, 32), elements=st.floats(-1e3, 1e3)))
def test_layernorm_standardizes(x):
    if np.ptp(x) < 1e-3:
        return
    out, _ = nk.layernorm(x, np.ones(x.size), np.zeros(x.size), eps=0.0)
    assert abs(out.mean()) < 1e-10
    assert abs(out.var() - 1.0) < 1e-10


def test_relu_and_dropout_identities():
    np.testing.assert_array_equal(nk.relu([-1.0, 2.0])[0], [0.0, 2.0])
    x = np.random.default_rng(0).normal(size=(5, 7))
    np.testing.assert_array_equal(nk.dropout(x, 0.1, None, training=False)[0], x)
    np.testing.assert_array_equal(nk.dropout(x, 0.0, nk.keyed_generator(1), training=True)[0], x)
    with pytest.raises(nk.DomainError):
        nk.dropout(x, 1.0, None, training=False)
    with pytest.raises(nk.DomainError):
        nk.dropout(x, -0.1, None, training=False)


def test_dropout_is_inverted_and_seeded():
    x = np.ones(20000)
    out, _ = nk.dropout(x, 0.25, nk.keyed_generator(5, 1, 2), training=True)
    kept = out != 0
    assert np.allclose(out[kept], 1 / 0.75)
    assert abs(kept.mean() - 0.75) < 0.02
    again, _ = nk.dropout(x, 0.25, nk.keyed_generator(5, 1, 2), training=True)
    np.testing.assert_array_equal(out, again)


def test_sigmoid_extremes_finite():
    s, _ = nk.sigmoid([-800.0, 0.0, 800.0])
    assert s.tolist() == [0.0, 0.5, 1.0]


# ---------------------------------------------------------------- backward


def test_mse_backward_zero_at_minimum():
    _, cache = nk.mse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert np.all(nk.mse_backward(cache) == 0.0)


def test_relu_backward_values():
    _, cache = nk.relu([-1.0, 2.0, 0.0])
    np.testing.assert_array_equal(nk.relu_backward(cache, np.ones(3)), [0.0, 1.0, 0.0])


@pytest.mark.parametrize("fn", [nk.softmax_temp_backward, nk.layernorm_backward,
                                nk.relu_backward, nk.dropout_backward, nk.sigmoid_backward])
def test_backward_before_forward(fn):
    with pytest.raises(nk.StateError):
        fn(None, np.ones(3))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def test_matmul_backward_fd(rng):
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
    w = rng.normal(size=(5, 3))
    da, db = nk.matmul_backward(a, b, w)
    fd_check(lambda: float(np.sum(w * nk.matmul(a, b))), a, da)
    fd_check(lambda: float(np.sum(w * nk.matmul(a, b))), b, db)


def test_softmax_backward_fd_including_tau(rng):
    z = rng.normal(size=(5, 7))
    tau = np.exp(rng.normal(size=5) * 0.5)
    mask = rng.random((5, 7)) > 0.3
    mask[:, 0] = True
    w = rng.normal(size=(5, 7))

    def loss():
        return float(np.sum(w * nk.softmax_temp(z, tau, mask)[0]))

    _, cache = nk.softmax_temp(z, tau, mask)
    dz, dtau = nk.softmax_temp_backward(cache, w)
    fd_check(loss, z, dz)
    fd_check(loss, tau, dtau)


def test_softmax_backward_scalar_tau(rng):
    z = rng.normal(size=(5, 7))
    tau = np.array(1.7)
    w = rng.normal(size=(5, 7))
    _, cache = nk.softmax_temp(z, tau)
    _, dtau = nk.softmax_temp_backward(cache, w)
    num = numeric_grad(lambda: float(np.sum(w * nk.softmax_temp(z, tau)[0])), tau)
    assert compare(dtau, num)[0] < 1e-6


def test_layernorm_backward_fd(rng):
    x = rng.normal(size=(5, 7))
    g, b = rng.normal(size=7), rng.normal(size=7)
    w = rng.normal(size=(5, 7))

    def loss():
        return float(np.sum(w * nk.layernorm(x, g, b)[0]))

    _, cache = nk.layernorm(x, g, b)
    dx, dg, db = nk.layernorm_backward(cache, w)
    fd_check(loss, x, dx)
    fd_check(loss, g, dg)
    fd_check(loss, b, db)


def test_relu_backward_fd(rng):
    x = rng.normal(size=(5, 7))
    x[np.abs(x) < 1e-3] = 0.5  # keep clear of the kink
    w = rng.normal(size=(5, 7))
    _, cache = nk.relu(x)
    fd_check(lambda: float(np.sum(w * nk.relu(x)[0])), x, nk.relu_backward(cache, w))


def test_dropout_backward_fd(rng):
    x = rng.normal(size=(5, 7))
    w = rng.normal(size=(5, 7))

    def loss():
        return float(np.sum(w * nk.dropout(x, 0.3, nk.keyed_generator(9), True)[0]))

    _, cache = nk.dropout(x, 0.3, nk.keyed_generator(9), True)
    fd_check(loss, x, nk.dropout_backward(cache, w))


def test_sigmoid_backward_fd(rng):
    x = rng.normal(size=(5, 7)) * 3
    w = rng.normal(size=(5, 7))
    _, cache = nk.sigmoid(x)
    fd_check(lambda: float(np.sum(w * nk.sigmoid(x)[0])), x, nk.sigmoid_backward(cache, w))


def test_mse_backward_fd(rng):
    p, t = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    _, cache = nk.mse(p, t)
    fd_check(lambda: nk.mse(p, t)[0], p, nk.mse_backward(cache))


# ---------------------------------------------------------------- DualTensor / determinism


def test_dual_tensor_accumulates_and_resets():
    t = nk.DualTensor(np.zeros((2, 3)))
    t.accumulate(np.ones((2, 3)))
    t.accumulate(np.ones((2, 3)))
    assert np.all(t.grad == 2.0)
    t.zero_grad()
    assert np.all(t.grad == 0.0)
    with pytest.raises(nk.DimensionError):
        t.accumulate(np.ones(3))


def test_kernels_are_deterministic():
    def run():
        g = nk.keyed_generator(11, 2)
        x = g.normal(size=(5, 7))
        y, _ = nk.layernorm(x, np.ones(7), np.zeros(7))
        y, _ = nk.dropout(nk.relu(y)[0], 0.1, nk.keyed_generator(11, 3), True)
        return nk.softmax_temp(nk.matmul(y, y.T), 0.7)[0]

    assert run().tobytes() == run().tobytes()
