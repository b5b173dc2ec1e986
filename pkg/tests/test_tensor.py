"""Autodiff core: op semantics, backward correctness, tape mechanics."""

import numpy as np
import pytest

from trifuse import tensor as T
from trifuse.gradcheck import check_function
from trifuse.tensor import (NonFiniteError, Param, Tensor, no_grad)


def test_tensor_basics():
    t = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.shape == (2, 2)
    assert t.dtype == np.float64
    assert not t.requires_grad
    assert t.detach().requires_grad is False
    with pytest.raises(NonFiniteError):
        Tensor([[1.0, np.nan]])


def test_param_freeze_contract():
    p = Param(np.ones((2, 3)))
    assert p.requires_grad and not p.frozen
    assert p.grad.shape == (2, 3)
    p.freeze()
    assert p.frozen and not p.requires_grad
    out = T.tsum(T.mul(p, 2.0))
    out.backward()
    # frozen params are pruned from the graph; grad stays all zeros
    assert np.all(p.grad == 0.0)


def test_backward_accumulates_over_reuse():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = T.add(T.mul(x, x), T.mul(x, 2.0))  # x^2 + 2x
    T.tsum(y).backward()
    assert np.allclose(x.grad, [8.0])


def test_backward_diamond_graph():
    x = Tensor(np.array([2.0]), requires_grad=True)
    a = T.mul(x, 3.0)
    b = T.mul(x, 5.0)
    out = T.tsum(T.mul(a, b))  # 15 x^2 -> d/dx = 30 x
    out.backward()
    assert np.allclose(x.grad, [60.0])


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        T.mul(x, 2.0).backward()


def test_no_grad_suppresses_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = T.mul(x, 2.0)
    assert not y._parents
    assert not y.requires_grad


def test_broadcasting_unbroadcast():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones((3, 1)), requires_grad=True)
    c = Tensor(np.ones(4), requires_grad=True)
    out = T.tsum(T.add(T.add(a, b), c))
    out.backward()
    assert a.grad.shape == (3, 4) and np.all(a.grad == 1.0)
    assert b.grad.shape == (3, 1) and np.all(b.grad == 4.0)
    assert c.grad.shape == (4,) and np.all(c.grad == 3.0)


def test_operator_sugar():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = (-x + 3.0) * 2.0 / 4.0 - 1.0  # (3 - x)/2 - 1
    y.sum().backward()
    assert np.allclose(y.data, [-0.5])
    assert np.allclose(x.grad, [-0.5])
    z = Tensor(np.array([2.0])) ** 3
    assert np.allclose(z.data, [8.0])


def test_matmul_batched_shapes():
    a = Tensor(np.ones((2, 3, 4)))
    b = Tensor(np.ones((4, 5)))
    assert T.matmul(a, b).shape == (2, 3, 5)
    with pytest.raises(ValueError):
        T.matmul(Tensor(np.ones(3)), Tensor(np.ones(3)))


def test_gelu_exact_vs_tanh_close_but_distinct():
    x = Tensor(np.linspace(-3, 3, 13))
    approx = T.gelu(x).data
    exact = T.gelu(x, exact=True).data
    assert np.max(np.abs(approx - exact)) < 5e-3
    assert np.max(np.abs(approx - exact)) > 0.0


def test_activation_values_match_references():
    x = np.array([-2.0, -0.5, 0.5, 2.0])
    t = Tensor(x)
    assert np.allclose(T.sigmoid(t).data, 1 / (1 + np.exp(-x)))
    assert np.allclose(T.softplus(t).data, np.log1p(np.exp(x)))
    assert np.allclose(T.silu(t).data, x / (1 + np.exp(-x)))
    assert np.allclose(T.relu(t).data, np.maximum(x, 0))
    from scipy.special import erf as ref_erf
    assert np.allclose(T.erf(t).data, ref_erf(x))


def test_reductions_and_argextremes():
    x = Tensor(np.arange(12.0).reshape(3, 4))
    assert np.allclose(T.tsum(x, axis=0).data, x.data.sum(axis=0))
    assert np.allclose(T.tmean(x, axis=1, keepdims=True).data,
                       x.data.mean(axis=1, keepdims=True))
    assert np.allclose(T.tmax(x, axis=1).data, x.data.max(axis=1))
    assert np.allclose(T.tmin(x, axis=0).data, x.data.min(axis=0))


def test_max_ties_route_gradient_to_first():
    x = Tensor(np.array([[1.0, 5.0, 5.0]]), requires_grad=True)
    T.tsum(T.tmax(x, axis=1)).backward()
    assert np.allclose(x.grad, [[0.0, 1.0, 0.0]])


def test_concat_narrow_round_trip():
    rng = np.random.default_rng(0)
    parts = [Tensor(rng.normal(size=(2, n))) for n in (1, 3, 2)]
    whole = T.concat(parts, axis=1)
    back = [T.narrow(whole, 1, off, n).data
            for off, n in ((0, 1), (1, 3), (4, 2))]
    for p, b in zip(parts, back):
        assert np.array_equal(p.data, b)


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(1).normal(size=(4, 6)) * 3)
    s = T.softmax(x, axis=-1).data
    assert np.allclose(s.sum(axis=-1), 1.0, atol=1e-12)
    assert s.min() > 0


def test_finite_checks_raise_and_can_be_disabled():
    big = Tensor(np.array([1e308]))
    with pytest.raises(NonFiniteError), np.errstate(over="ignore"):
        T.mul(big, 10.0)
    T.set_finite_checks(False)
    try:
        with np.errstate(over="ignore"):
            out = T.mul(big, 10.0)
        assert np.isinf(out.data).any()
    finally:
        T.set_finite_checks(True)


def test_default_dtype_switch():
    T.set_default_dtype(np.float32)
    try:
        assert Tensor([1.0]).dtype == np.float32
    finally:
        T.set_default_dtype(np.float64)
    assert Tensor([1.0]).dtype == np.float64


# -- the scan -----------------------------------------------------------


def _reference_recurrence(a, b):
    h = np.zeros_like(b)
    acc = np.zeros(a.shape[:-1])
    for k in range(a.shape[-1]):
        acc = a[..., k] * acc + b[..., k]
        h[..., k] = acc
    return h


def test_linear_recurrence_hand_case():
    a = Tensor(np.full((1, 1, 3), 0.5))
    b = Tensor(np.ones((1, 1, 3)))
    h = T.linear_recurrence(a, b)
    assert np.allclose(h.data.ravel(), [1.0, 1.5, 1.75], atol=1e-15)


@pytest.mark.parametrize("shape,chunk", [
    ((2, 3, 17), 4), ((1, 1, 1), 8), ((4, 2, 64), 64),
    ((2, 2, 5), 128), ((3, 1, 33), 8),
])
def test_linear_recurrence_matches_loop(shape, chunk):
    rng = np.random.default_rng(hash(shape) % 2**32)
    a = rng.uniform(0.1, 0.99, size=shape)
    b = rng.normal(size=shape)
    h = T.linear_recurrence(Tensor(a), Tensor(b), chunk=chunk)
    assert np.max(np.abs(h.data - _reference_recurrence(a, b))) < 1e-12


def test_linear_recurrence_does_not_mutate_inputs():
    rng = np.random.default_rng(5)
    a = Tensor(rng.uniform(0.2, 0.9, size=(2, 2, 6)))
    b = Tensor(rng.normal(size=(2, 2, 6)))
    a_before, b_before = a.data.copy(), b.data.copy()
    T.linear_recurrence(a, b, chunk=128)  # single chunk covers everything
    assert np.array_equal(a.data, a_before)
    assert np.array_equal(b.data, b_before)


def test_linear_recurrence_gradient_small():
    rng = np.random.default_rng(3)
    a = Tensor(rng.uniform(0.2, 0.9, size=(2, 7)), requires_grad=True)
    b = Tensor(rng.normal(size=(2, 7)), requires_grad=True)
    w = rng.normal(size=(2, 7))
    err = check_function(
        lambda: T.tsum(T.mul(T.linear_recurrence(a, b, chunk=3), Tensor(w))),
        [a, b])
    assert err < 1e-8


def test_dwconv_same_and_causal_padding():
    x = Tensor(np.array([[0.0, 3.0, 0.0]]))
    k_id = Tensor(np.array([[0.0, 1.0, 0.0]]))
    assert np.allclose(T.dwconv1d(x, k_id).data, x.data)
    k_avg = Tensor(np.array([[1.0, 1.0, 1.0]]) / 3.0)
    assert np.allclose(T.dwconv1d(x, k_avg).data, [[1.0, 1.0, 1.0]])
    # causal: tap order [oldest .. current], no lookahead
    causal = T.dwconv1d(x, Tensor(np.array([[1.0, 1.0, 1.0]])), causal=True)
    assert np.allclose(causal.data, [[0.0, 3.0, 3.0]])
    with pytest.raises(ValueError):
        T.dwconv1d(x, Tensor(np.ones((1, 4))))  # even kernel


def test_norm_affine_axis_semantics():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(4, 6)) * 3 + 1)
    gain = Tensor(np.ones(4))
    shift = Tensor(np.zeros(4))
    col = T.norm_affine(x, gain, shift, 1e-5, axis=0).data
    assert np.abs(col.mean(axis=0)).max() < 1e-12
    row_gain = Tensor(np.ones(4))
    row = T.norm_affine(x, row_gain, shift, 1e-5, axis=1).data
    assert np.abs(row.mean(axis=1)).max() < 1e-12
