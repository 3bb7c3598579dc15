import numpy as np
import pytest

from streamdenoise import tensor as T
from streamdenoise.tensor import Tape, Tensor, grad_check

SEEDS = range(10)


def _away_from_zero(rng, shape):
    x = rng.uniform(0.1, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _weighted_sum(rng, shape):
    """Random linear readout so the checked scalar depends on every output element."""
    r = Tensor(rng.normal(size=shape))
    return lambda y: T.sum_(T.mul(y, r))


# one entry per primitive: (name, builder(rng) -> (f, x))
def _unary(op, shape=(3, 4)):
    def build(rng):
        x = Tensor(_away_from_zero(rng, shape))
        readout = _weighted_sum(rng, shape)
        return (lambda t: readout(op(t))), x
    return build


def _binary_first(op, shape=(3, 4)):
    def build(rng):
        other = Tensor(rng.normal(size=shape))
        x = Tensor(rng.normal(size=shape))
        readout = _weighted_sum(rng, shape)
        return (lambda t: readout(op(t, other))), x
    return build


def _binary_second(op, shape=(3, 4)):
    def build(rng):
        other = Tensor(rng.normal(size=shape))
        x = Tensor(rng.normal(size=shape))
        readout = _weighted_sum(rng, shape)
        return (lambda t: readout(op(other, t))), x
    return build


def _matmul_left(rng):
    b = Tensor(rng.normal(size=(4, 5)))
    readout = _weighted_sum(rng, (3, 5))
    return (lambda t: readout(T.matmul(t, b))), Tensor(rng.normal(size=(3, 4)))


def _matmul_right(rng):
    a = Tensor(rng.normal(size=(3, 4)))
    readout = _weighted_sum(rng, (3, 5))
    return (lambda t: readout(T.matmul(a, t))), Tensor(rng.normal(size=(4, 5)))


def _bias_add_bias(rng):
    x = Tensor(rng.normal(size=(2, 3, 5)))
    readout = _weighted_sum(rng, (2, 3, 5))
    return (lambda t: readout(T.bias_add(x, t))), Tensor(rng.normal(size=3))


def _bias_add_input(rng):
    b = Tensor(rng.normal(size=3))
    readout = _weighted_sum(rng, (2, 3))
    return (lambda t: readout(T.bias_add(t, b))), Tensor(rng.normal(size=(2, 3)))


def _conv(stride, padding, k, wrt):
    def build(rng):
        x = Tensor(rng.normal(size=(2, 3, 8)))
        w = Tensor(rng.normal(size=(4, 3, k)))
        fo = (8 + 2 * padding - k) // stride + 1
        readout = _weighted_sum(rng, (2, 4, fo))
        if wrt == "x":
            return (lambda t: readout(T.conv1d(t, w, stride, padding))), x
        return (lambda t: readout(T.conv1d(x, t, stride, padding))), w
    return build


def _convt(stride, padding, k, wrt):
    def build(rng):
        x = Tensor(rng.normal(size=(2, 3, 4)))
        w = Tensor(rng.normal(size=(3, 2, k)))
        readout = _weighted_sum(rng, (2, 2, 4 * stride))
        if wrt == "x":
            return (lambda t: readout(T.conv_transpose1d(t, w, stride, padding))), x
        return (lambda t: readout(T.conv_transpose1d(x, t, stride, padding))), w
    return build


def _concat(rng):
    other = Tensor(rng.normal(size=(2, 2, 3)))
    readout = _weighted_sum(rng, (2, 5, 3))
    return (lambda t: readout(T.concat([other, t, other], axis=1))), Tensor(rng.normal(size=(2, 1, 3)))


def _slice(rng):
    readout = _weighted_sum(rng, (2, 2, 3))
    return (lambda t: readout(T.slice_(t, 1, 1, 3))), Tensor(rng.normal(size=(2, 4, 3)))


def _split_stack(rng):
    readout = _weighted_sum(rng, (3, 4))
    return (lambda t: readout(T.stack(T.split(t, axis=1)[::-1], axis=1))), Tensor(rng.normal(size=(3, 4)))


def _reshape_transpose(rng):
    readout = _weighted_sum(rng, (4, 2, 3))
    return (lambda t: readout(T.transpose(T.reshape(t, (2, 3, 4)), (2, 0, 1)))), Tensor(rng.normal(size=(6, 4)))


def _mean(rng):
    return (lambda t: T.mean(T.mul(t, t))), Tensor(rng.normal(size=(3, 3)))


PRIMITIVES = {
    "add": _binary_first(T.add),
    "sub_lhs": _binary_first(T.sub),
    "sub_rhs": _binary_second(T.sub),
    "mul": _binary_first(T.mul),
    "scale": _unary(lambda t: T.scale(t, -2.5)),
    "sigmoid": _unary(T.sigmoid),
    "tanh": _unary(T.tanh),
    "relu": _unary(T.relu),
    "matmul_lhs": _matmul_left,
    "matmul_rhs": _matmul_right,
    "bias_add_bias": _bias_add_bias,
    "bias_add_input": _bias_add_input,
    "conv_x": _conv(1, 1, 3, "x"),
    "conv_w": _conv(1, 1, 3, "w"),
    "conv_stride2_x": _conv(2, 2, 5, "x"),
    "conv_stride2_w": _conv(2, 2, 5, "w"),
    "convT_x": _convt(2, 1, 3, "x"),
    "convT_w": _convt(2, 1, 3, "w"),
    "convT_k5_x": _convt(2, 2, 5, "x"),
    "convT_s1_w": _convt(1, 1, 3, "w"),
    "concat": _concat,
    "slice": _slice,
    "split_stack": _split_stack,
    "reshape_transpose": _reshape_transpose,
    "mean": _mean,
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_matches_finite_differences(name):
    worst = 0.0
    for seed in SEEDS:
        f, x = PRIMITIVES[name](np.random.default_rng(seed))
        worst = max(worst, grad_check(f, x, eps=1e-6))
    assert worst <= 1e-5, f"{name}: {worst}"


def test_quadratic_form_grad_check_tight():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 5))
    A = Tensor(a @ a.T)
    x = Tensor(rng.normal(size=(5, 1)))
    f = lambda t: T.sum_(T.mul(t, T.matmul(A, t)))
    assert grad_check(f, x, eps=1e-5) <= 1e-9


def test_constant_function_zero_gradient():
    c = Tensor(np.array(3.0))
    x = Tensor(np.ones(4))
    assert grad_check(lambda t: c, x) == 0.0


def test_grad_check_rejects_bad_eps_and_nonfinite():
    x = Tensor(np.ones(2))
    with pytest.raises(ValueError):
        grad_check(lambda t: T.sum_(t), x, eps=1e-2)
    with pytest.raises(ValueError):
        grad_check(lambda t: T.sum_(T.scale(t, np.inf)), x)


def test_sum_of_squares_gradient():
    x = Tensor(np.array([1.0, -2.0, 3.5]), requires_grad=True)
    with Tape() as tape:
        loss = T.sum_(T.mul(x, x))
    g = tape.backward(loss)
    np.testing.assert_array_equal(g[x], 2 * x.data)
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_sigmoid_derivative_at_zero():
    w = Tensor(np.array([[0.0]]), requires_grad=True)
    x = Tensor(np.array([[1.0]]))
    with Tape() as tape:
        loss = T.sum_(T.sigmoid(T.matmul(w, x)))
    assert tape.backward(loss)[w][0, 0] == pytest.approx(0.25, abs=1e-15)


def test_fan_out_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with Tape() as tape:
        y = T.scale(x, 3.0)
        loss = T.sum_(T.add(T.mul(y, y), y))  # 9x^2 + 3x
    assert tape.backward(loss)[x][0] == pytest.approx(18 * 2.0 + 3)


def test_slice_fan_out_does_not_alias():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        parts = T.split(x, axis=0)
        loss = T.sum_(T.add(T.add(parts[0], parts[1]), parts[0]))
    g = tape.backward(loss)[x]
    np.testing.assert_array_equal(g, [[2, 2, 2], [1, 1, 1]])


def test_backward_errors():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = T.scale(x, 2.0)
    with pytest.raises(T.ShapeError):
        tape.backward(y)
    with Tape() as tape:
        loss = T.sum_(y)
    other = Tape()
    with pytest.raises(T.TapeError):
        other.backward(loss)
    tape.backward(loss)
    with pytest.raises(T.TapeError):
        tape.backward(loss)


def test_no_tape_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    y = T.scale(x, 2.0)
    assert not y.requires_grad


def test_matmul_identity():
    x = np.random.default_rng(1).normal(size=(4, 3))
    np.testing.assert_array_equal(T.matmul(np.eye(4), x).data, x)


def test_conv_all_ones_hand_value():
    x = Tensor(np.ones((1, 2, 8)))
    w = Tensor(np.ones((4, 2, 3)))
    y = T.conv1d(x, w, stride=1, padding=1).data
    assert y.shape == (1, 4, 8)
    np.testing.assert_array_equal(y[0, :, 1:-1], 6.0)
    np.testing.assert_array_equal(y[0, :, [0, -1]], 4.0)


def test_conv_kernel1_equals_per_bin_matmul():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(3, 4, 10))
    w = rng.normal(size=(5, 4, 1))
    y = T.conv1d(x, w).data
    ref = np.stack([w[:, :, 0] @ x[n] for n in range(3)])
    np.testing.assert_allclose(y, ref, rtol=1e-12, atol=1e-12)


def test_conv_transpose_is_adjoint_of_conv():
    # <conv(x), y> == <x, convT(y)> for stride-2 same-padding pairs
    rng = np.random.default_rng(3)
    k, s, p = 3, 2, 1
    w = rng.normal(size=(4, 3, k))
    x = rng.normal(size=(1, 3, 8))
    y = rng.normal(size=(1, 4, 4))
    lhs = np.sum(T.conv1d(x, w, s, p).data * y)
    rhs = np.sum(x * T.conv_transpose1d(y, w, s, p).data)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_shape_mismatch_reports_both_shapes():
    with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(3, 3\)"):
        T.add(np.ones((2, 3)), np.ones((3, 3)))


def test_sigmoid_zero():
    assert T.sigmoid(np.array(0.0)).data == 0.5
