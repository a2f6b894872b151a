import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from t2tgan import diffcore as dc
from helpers import FD_RTOL, OP_NAMES, gradcheck, op_cases, projected


def _rng(seed):
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# shape discipline


def test_add_rejects_broadcasting():
    with pytest.raises(dc.ShapeError):
        dc.add(np.ones((3, 1)), np.ones((3, 4)))


def test_matmul_rejects_inner_mismatch():
    with pytest.raises(dc.ShapeError):
        dc.matmul(np.ones((2, 3)), np.ones((4, 5)))


def test_backward_needs_scalar_loss():
    x = dc.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(dc.ShapeError):
        dc.backward(dc.scale(x, 2.0))


def test_bias_add_checks_extent():
    with pytest.raises(dc.ShapeError):
        dc.bias_add(np.ones((2, 3)), np.ones(2))


def test_gradient_accumulates_over_reuse():
    # d/dx sum(x*x + x) = 2x + 1
    x0 = np.array([1.0, -2.0, 0.5])
    x = dc.Tensor(x0, requires_grad=True)
    loss = dc.sum_all(dc.add(dc.mul(x, x), x))
    np.testing.assert_allclose(dc.backward(loss)[x], 2 * x0 + 1, rtol=0, atol=0)


def test_untracked_graph_has_no_grads():
    loss = dc.sum_all(dc.Tensor(np.ones(3)))
    assert dc.backward(loss) == {}


# ---------------------------------------------------------------------------
# forward values against plain numpy


def test_conv1d_matches_direct_sum():
    rng = _rng(0)
    x = rng.normal(size=(2, 3, 11))
    k = rng.normal(size=(4, 3, 5))
    out = dc.conv1d(x, k, stride=2, padding=2).data
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    L = (11 + 4 - 5) // 2 + 1
    ref = np.zeros((2, 4, L))
    for b in range(2):
        for o in range(4):
            for t in range(L):
                ref[b, o, t] = np.sum(xp[b, :, 2 * t : 2 * t + 5] * k[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_conv1d_unbatched_input():
    rng = _rng(1)
    x = rng.normal(size=(3, 9))
    k = rng.normal(size=(2, 3, 3))
    np.testing.assert_allclose(dc.conv1d(x, k, padding=1).data, dc.conv1d(x[None], k, padding=1).data[0])


def test_maxpool_drops_remainder_and_reports_argmax():
    x = np.array([[1.0, 3.0, 2.0, 0.0, 5.0]])
    out, idx = dc.maxpool1d(x, 2)
    np.testing.assert_array_equal(out.data, [[3.0, 2.0]])
    np.testing.assert_array_equal(idx, [[1, 2]])


def test_maxpool_window_longer_than_input():
    with pytest.raises(dc.ShapeError):
        dc.maxpool1d(np.ones((1, 3)), 4)


def test_sigmoid_is_stable_at_extremes():
    y = dc.sigmoid(np.array([-800.0, 0.0, 800.0])).data
    np.testing.assert_array_equal(y, [0.0, 0.5, 1.0])


def test_losses_values():
    a = np.array([1.0, 2.0, 4.0])
    b = np.array([0.0, 2.0, 2.0])
    assert dc.mse_loss(a, b).item() == pytest.approx(5.0 / 3.0)
    assert dc.l1_loss(a, b).item() == pytest.approx(1.0)


def _lstm_reference(x, w_ih, w_hh, b):
    """Textbook LSTM cell loop, gate order i, f, g, o."""
    T, B, _ = x.shape
    H = w_hh.shape[0]
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    out = []
    for t in range(T):
        z = x[t] @ w_ih + h @ w_hh + b
        i, f, g, o = sig(z[:, :H]), sig(z[:, H : 2 * H]), np.tanh(z[:, 2 * H : 3 * H]), sig(z[:, 3 * H :])
        c = f * c + i * g
        h = o * np.tanh(c)
        out.append(h)
    return np.stack(out)


@pytest.mark.parametrize("use_kernel", [True, False])
def test_lstm_matches_textbook_cell(use_kernel):
    rng = _rng(2)
    T, B, I, H = 17, 3, 2, 5
    args = (rng.normal(size=(T, B, I)), rng.normal(size=(I, 4 * H)), rng.normal(size=(H, 4 * H)), rng.normal(size=4 * H))
    np.testing.assert_allclose(dc.lstm(*args, use_kernel=use_kernel).data, _lstm_reference(*args), atol=1e-12)


def test_lstm_kernel_agrees_with_numpy_path_on_gradients():
    rng = _rng(3)
    T, B, I, H = 40, 4, 3, 6
    arrays = [rng.normal(size=(T, B, I)), rng.normal(size=(I, 4 * H)) * 0.5, rng.normal(size=(H, 4 * H)) * 0.5, rng.normal(size=4 * H)]
    w = rng.normal(size=(T, B, H))
    results = []
    for use_kernel in (True, False):
        leaves = [dc.Tensor(a, requires_grad=True) for a in arrays]
        loss = dc.sum_all(dc.mul(dc.lstm(*leaves, use_kernel=use_kernel), dc.Tensor(w)))
        g = dc.backward(loss)
        results.append([g[l] for l in leaves])
    for a, b in zip(*results):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_lstm_rejects_bad_weight_shapes():
    with pytest.raises(dc.ShapeError):
        dc.lstm(np.ones((3, 1, 2)), np.ones((2, 8)), np.ones((3, 12)), np.ones(12))


# ---------------------------------------------------------------------------
# finite differences, one small instance per op


@pytest.mark.parametrize("name", OP_NAMES)
def test_op_gradients_match_finite_differences(name):
    for case_name, fn, arrays, pattern in op_cases(_rng(100)):
        if case_name == name:
            assert gradcheck(fn, arrays, pattern=pattern) < FD_RTOL


@pytest.mark.parametrize("size", [1.0, 1e-6])
def test_gradcheck_flags_a_wrong_backward(size):
    # cube with the derivative off by 1%; must be caught even when the gradient is tiny
    def bad_cube(x):
        return dc._node(x.data**3, (x,), lambda g: (g * 3.03 * x.data**2,))

    x = np.array([size ** 0.5])
    assert gradcheck(lambda t: dc.sum_all(bad_cube(t)), [x]) > FD_RTOL


# ---------------------------------------------------------------------------
# optimizer


def test_adam_first_step_moves_by_lr_times_sign():
    # with bias correction the first step is lr * g / (|g| + eps)
    p = {"w": np.array([1.0, -1.0, 0.0])}
    g = {"w": np.array([0.3, -2.0, 1e-3])}
    new, state = dc.adam_step(p, g, dc.AdamState(), lr=0.1)
    expected = p["w"] - 0.1 * g["w"] / (np.abs(g["w"]) + 1e-8)
    np.testing.assert_allclose(new["w"], expected, rtol=1e-12)
    assert state.step == 1


def test_adam_matches_hand_rolled_two_steps():
    b1, b2, lr, eps = 0.5, 0.999, 2e-4, 1e-8
    p0 = np.array([0.2, -0.4])
    gs = [np.array([1.0, -0.5]), np.array([-0.25, 2.0])]
    m = v = np.zeros(2)
    p = p0.copy()
    for t, g in enumerate(gs, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    params, state = {"p": p0}, dc.AdamState()
    for g in gs:
        params, state = dc.adam_step(params, {"p": g}, state)
    np.testing.assert_allclose(params["p"], p, rtol=0, atol=1e-15)


def test_adam_does_not_mutate_inputs():
    p = {"w": np.ones(3)}
    state = dc.AdamState.fresh(p)
    before = state.copy()
    dc.adam_step(p, {"w": np.ones(3)}, state)
    np.testing.assert_array_equal(p["w"], 1.0)
    np.testing.assert_array_equal(state.m["w"], before.m["w"])
    assert state.step == 0


def test_adam_rejects_non_finite_gradient():
    with pytest.raises(dc.NonFiniteGradientError, match="'w'"):
        dc.adam_step({"w": np.ones(2)}, {"w": np.array([1.0, np.nan])}, dc.AdamState())


# ---------------------------------------------------------------------------
# properties


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_matmul_gradient_is_outer_product(n, k, m, seed):
    rng = _rng(seed)
    a, b, w = rng.normal(size=(n, k)), rng.normal(size=(k, m)), rng.normal(size=(n, m))
    ta, tb = dc.Tensor(a, requires_grad=True), dc.Tensor(b, requires_grad=True)
    g = dc.backward(projected(dc.matmul, w)(ta, tb))
    np.testing.assert_allclose(g[ta], w @ b.T, atol=1e-12)
    np.testing.assert_allclose(g[tb], a.T @ w, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(5, 20), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_conv1d_output_length(c_in, c_out, length, kernel, seed):
    rng = _rng(seed)
    pad = kernel // 2
    out = dc.conv1d(rng.normal(size=(1, c_in, length)), rng.normal(size=(c_out, c_in, kernel)), padding=pad)
    assert out.shape == (1, c_out, length + 2 * pad - kernel + 1)
