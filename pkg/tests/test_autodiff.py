"""Tape mechanics and elementwise primitives."""

import numpy as np
import pytest

from vidshift.autodiff import (
    Tape,
    Tensor,
    absolute,
    add,
    backward,
    concat_channels,
    mean_all,
    mul,
    relu,
    scale,
    split_channels,
    sub,
    sum_all,
    take_channels,
)
from vidshift.errors import InvalidArgument

from helpers import check_grads


def test_identity_gradient():
    tape = Tape()
    x = tape.watch(Tensor(np.array(3.0)))
    backward(tape, scale(x, 1.0))
    assert x.grad == 1.0


def test_sum_of_squares_gradient():
    tape = Tape()
    data = np.arange(6, dtype=np.float64).reshape(2, 3)
    x = tape.watch(Tensor(data))
    backward(tape, sum_all(mul(x, x)))
    np.testing.assert_array_equal(x.grad, 2 * data)


def test_untracked_tensor_never_accumulates():
    tape = Tape()
    x = tape.watch(Tensor(np.ones(3)))
    y = Tensor(np.full(3, 2.0))
    backward(tape, sum_all(mul(x, y)))
    np.testing.assert_array_equal(x.grad, y.data)
    assert y.grad is None


def test_non_scalar_root_rejected():
    tape = Tape()
    x = tape.watch(Tensor(np.ones(3)))
    with pytest.raises(InvalidArgument):
        backward(tape, mul(x, x))


def test_mixed_tapes_rejected():
    t1, t2 = Tape(), Tape()
    a = t1.watch(Tensor(np.ones(2)))
    b = t2.watch(Tensor(np.ones(2)))
    with pytest.raises(InvalidArgument):
        add(a, b)


def test_unreached_leaf_gets_zero_grad():
    tape = Tape()
    a = tape.watch(Tensor(np.ones(2)))
    b = tape.watch(Tensor(np.ones(2)))
    backward(tape, sum_all(a))
    np.testing.assert_array_equal(b.grad, np.zeros(2))


def test_backward_deterministic_bitwise():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((4, 3)).astype(np.float32)
    grads = []
    for _ in range(2):
        tape = Tape()
        x = tape.watch(Tensor(data.copy()))
        y = sum_all(mul(add(x, x), absolute(x)))
        backward(tape, y)
        grads.append(x.grad.tobytes())
    assert grads[0] == grads[1]


def test_repeated_backward_same_tape_identical():
    tape = Tape()
    x = tape.watch(Tensor(np.array([1.0, -2.0, 3.0])))
    y = sum_all(mul(x, x))
    backward(tape, y)
    first = x.grad.copy()
    backward(tape, y)
    np.testing.assert_array_equal(x.grad, first)


def test_grad_accumulates_over_multiple_uses():
    tape = Tape()
    x = tape.watch(Tensor(np.array([2.0])))
    y = add(mul(x, x), scale(x, 3.0))  # x^2 + 3x
    backward(tape, sum_all(y))
    np.testing.assert_allclose(x.grad, [7.0])


def test_detach_blocks_gradient():
    tape = Tape()
    x = tape.watch(Tensor(np.ones(3)))
    y = mul(x.detach(), x)
    backward(tape, sum_all(y))
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_concat_split_roundtrip_identity():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 6, 4, 4)))
    parts = split_channels(x, 3)
    back = concat_channels(parts)
    np.testing.assert_array_equal(back.data, x.data)


@pytest.mark.parametrize("parts", [2, 3, 6])
def test_concat_split_roundtrip_any_even_split(parts):
    rng = np.random.default_rng(parts)
    x = Tensor(rng.standard_normal((6, 5, 5)))
    np.testing.assert_array_equal(concat_channels(split_channels(x, parts)).data, x.data)


def test_split_channels_rejects_uneven():
    with pytest.raises(InvalidArgument):
        split_channels(Tensor(np.zeros((5, 2, 2))), 2)


@pytest.mark.parametrize(
    "name,fn,shapes",
    [
        ("add", add, [(3, 4, 4), (3, 4, 4)]),
        ("sub", sub, [(3, 4, 4), (3, 4, 4)]),
        ("mul", mul, [(3, 4, 4), (3, 4, 4)]),
        ("scale", lambda t: scale(t, -1.7), [(2, 3, 3)]),
        ("relu", relu, [(2, 5, 5)]),
        ("abs", absolute, [(2, 5, 5)]),
        ("sum", sum_all, [(2, 4, 4)]),
        ("mean", mean_all, [(2, 4, 4)]),
    ],
)
def test_elementwise_gradients(name, fn, shapes):
    rng = np.random.default_rng(hash(name) % 2**32)
    arrays = [rng.standard_normal(s) + 0.1 for s in shapes]
    check_grads(fn, arrays, seed=3)


def test_concat_and_slice_gradients():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((2, 4, 3, 3))
    b = rng.standard_normal((2, 2, 3, 3))
    check_grads(lambda x, y: concat_channels([x, y]), [a, b])
    check_grads(lambda x: take_channels(x, 1, 3), [a])
    check_grads(lambda x: split_channels(x, 2)[1], [a])
