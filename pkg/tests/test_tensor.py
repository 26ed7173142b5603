"""Engine-level tests: forward values against numpy, gradients against
central differences, and the frozen hand oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dualstream.tensor as T
from dualstream.errors import (
    DomainError,
    DualstreamError,
    NonFiniteError,
    ShapeError,
)
from dualstream.tensor import Tensor, clamp, constant, softmax


def fd_grad(f, x, eps=1e-6):
    """Central differences of a scalar function of one ndarray."""
    g = np.zeros_like(x)
    flat = x.ravel()
    out = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = f(x)
        flat[i] = orig - eps
        f_minus = f(x)
        flat[i] = orig
        out[i] = (f_plus - f_minus) / (2.0 * eps)
    return g


def check_grads(build, arrays, tol=1e-6):
    """build(tensors...) -> scalar Tensor; compare each input's gradient."""
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    build(*leaves).backward()
    for k, leaf in enumerate(leaves):
        def f(x, k=k):
            args = [Tensor(a) for a in arrays]
            args[k] = Tensor(x)
            return build(*args).item()
        num = fd_grad(f, arrays[k].copy())
        np.testing.assert_allclose(leaf.grad, num, rtol=tol, atol=tol)


class TestForward:
    def test_add_mul_match_numpy(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((3, 4))
        np.testing.assert_array_equal((Tensor(a) + Tensor(b)).data, a + b)
        np.testing.assert_array_equal((Tensor(a) * Tensor(b)).data, a * b)
        np.testing.assert_array_equal((Tensor(a) - Tensor(b)).data, a - b)

    def test_broadcasting(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((2, 3, 4))
        b = rng.standard_normal((3, 1))
        np.testing.assert_allclose((Tensor(a) + Tensor(b)).data, a + b)
        np.testing.assert_allclose((Tensor(a) / Tensor(np.abs(b) + 1.0)).data,
                                   a / (np.abs(b) + 1.0))

    def test_scalar_operands(self):
        a = Tensor([1.0, 2.0])
        np.testing.assert_array_equal((2.0 * a).data, [2.0, 4.0])
        np.testing.assert_array_equal((a + 1).data, [2.0, 3.0])
        np.testing.assert_array_equal((1.0 - a).data, [0.0, -1.0])
        np.testing.assert_array_equal((2.0 / a).data, [2.0, 1.0])

    def test_matmul(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((3, 5))
        b = rng.standard_normal((5, 2))
        np.testing.assert_allclose((Tensor(a) @ Tensor(b)).data, a @ b,
                                   atol=1e-12)

    def test_reductions_match_numpy(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((2, 3, 4))
        t = Tensor(a)
        np.testing.assert_allclose(t.sum().data, a.sum())
        np.testing.assert_allclose(t.sum(axis=1).data, a.sum(axis=1))
        np.testing.assert_allclose(t.sum(axis=(0, 2), keepdims=True).data,
                                   a.sum(axis=(0, 2), keepdims=True))
        np.testing.assert_allclose(t.mean(axis=2).data, a.mean(axis=2))
        np.testing.assert_allclose(t.var(axis=0).data, a.var(axis=0),
                                   atol=1e-12)

    def test_negative_axis(self):
        a = np.arange(6.0).reshape(2, 3)
        np.testing.assert_allclose(Tensor(a).sum(axis=-1).data, a.sum(axis=-1))

    def test_var_frozen_value(self):
        # biased variance of [1, 2, 3] is 2/3 exactly
        assert Tensor([1.0, 2.0, 3.0]).var().item() == pytest.approx(
            2.0 / 3.0, abs=1e-15)

    def test_softmax_frozen_value(self):
        # softmax([0, ln 3]) = [1/4, 3/4]
        out = softmax(Tensor([0.0, np.log(3.0)]), axis=0)
        np.testing.assert_allclose(out.data, [0.25, 0.75], atol=1e-15)

    def test_softmax_rows_normalize(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((5, 7)) * 10.0)
        out = softmax(x, axis=1)
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((3, 4))
        a = softmax(Tensor(x), axis=1).data
        b = softmax(Tensor(x + 100.0), axis=1).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_unary_maps(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(0.1, 2.0, size=(4, 3))
        np.testing.assert_allclose(T.exp(Tensor(x)).data, np.exp(x))
        np.testing.assert_allclose(T.log(Tensor(x)).data, np.log(x))
        np.testing.assert_allclose(T.sqrt(Tensor(x)).data, np.sqrt(x))
        np.testing.assert_allclose(T.tanh(Tensor(x)).data, np.tanh(x))
        np.testing.assert_allclose(T.sigmoid(Tensor(x)).data,
                                   1.0 / (1.0 + np.exp(-x)))

    def test_shape_ops(self):
        a = np.arange(24.0).reshape(2, 3, 4)
        t = Tensor(a)
        np.testing.assert_array_equal(t.reshape(6, 4).data, a.reshape(6, 4))
        np.testing.assert_array_equal(t.transpose(2, 0, 1).data,
                                      a.transpose(2, 0, 1))
        np.testing.assert_array_equal(t.transpose().data, a.T)
        b = Tensor(np.ones((1, 4)))
        np.testing.assert_array_equal(b.broadcast_to((3, 4)).data,
                                      np.ones((3, 4)))

    @given(st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_add_mul_commute_with_numpy(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((2, 3))
        b = rng.standard_normal((3,))
        np.testing.assert_array_equal((Tensor(a) + Tensor(b)).data, a + b)
        np.testing.assert_array_equal((Tensor(a) * Tensor(b)).data, a * b)


class TestBackward:
    def test_add(self):
        rng = np.random.default_rng(10)
        check_grads(lambda a, b: (a + b).sum(),
                    [rng.standard_normal((3, 2)), rng.standard_normal((3, 2))])

    def test_mul_broadcast(self):
        rng = np.random.default_rng(11)
        check_grads(lambda a, b: (a * b).sum(),
                    [rng.standard_normal((2, 3, 4)), rng.standard_normal((4,))])

    def test_div(self):
        rng = np.random.default_rng(12)
        check_grads(lambda a, b: (a / b).sum(),
                    [rng.standard_normal((3, 3)),
                     rng.uniform(0.5, 2.0, size=(3, 3))])

    def test_matmul(self):
        rng = np.random.default_rng(13)
        check_grads(lambda a, b: (a @ b).sum(),
                    [rng.standard_normal((3, 4)), rng.standard_normal((4, 2))])

    def test_unaries(self):
        rng = np.random.default_rng(14)
        x = rng.uniform(0.2, 1.5, size=(2, 3))
        check_grads(lambda a: T.exp(a).sum(), [x])
        check_grads(lambda a: T.log(a).sum(), [x])
        check_grads(lambda a: T.sqrt(a).sum(), [x])
        check_grads(lambda a: T.tanh(a).sum(), [x])
        check_grads(lambda a: T.sigmoid(a).sum(), [x])

    def test_reductions(self):
        rng = np.random.default_rng(15)
        x = rng.standard_normal((2, 3, 4))
        check_grads(lambda a: a.sum(axis=(0, 2)).sum(), [x])
        check_grads(lambda a: a.mean(axis=1).sum(), [x])
        check_grads(lambda a: a.var(axis=2).sum(), [x])

    def test_shape_ops(self):
        rng = np.random.default_rng(16)
        x = rng.standard_normal((2, 6))
        check_grads(lambda a: (a.reshape(3, 4) * a.reshape(3, 4)).sum(), [x])
        check_grads(lambda a: a.transpose(1, 0).mean(), [x])
        check_grads(lambda a: a.reshape(2, 6, 1).broadcast_to((2, 6, 3)).sum(),
                    [x])

    def test_softmax(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((3, 4))
        check_grads(lambda a: (softmax(a, axis=1) * constant(w)).sum(), [x])

    def test_composite(self):
        rng = np.random.default_rng(18)
        check_grads(
            lambda a, b: T.sigmoid(a @ b).var(axis=0).sum(),
            [rng.standard_normal((4, 3)), rng.standard_normal((3, 2))])

    def test_diamond_graph(self):
        # z = x*y + x reuses x; dz/dx must accumulate to y + 1
        x = Tensor([2.0, 3.0], requires_grad=True)
        y = Tensor([5.0, 7.0], requires_grad=True)
        (x * y + x).sum().backward()
        np.testing.assert_array_equal(x.grad, [6.0, 8.0])
        np.testing.assert_array_equal(y.grad, [2.0, 3.0])

    def test_grad_accumulates_across_backward_calls(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        (x * x).sum().backward()
        first = x.grad.copy()
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, 2.0 * first)
        x.zero_grad()
        np.testing.assert_array_equal(x.grad, np.zeros(2))

    def test_grad_stays_on_leaves(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        mid = x * 3.0
        mid.sum().backward()
        # the intermediate never receives a stored gradient
        np.testing.assert_array_equal(mid.grad, np.zeros(2))
        np.testing.assert_array_equal(x.grad, [3.0, 3.0])

    def test_constant_blocks_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        c = constant([4.0, 5.0])
        (x * c).sum().backward()
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, [4.0, 5.0])

    def test_detach_cuts_history(self):
        x = Tensor([1.0], requires_grad=True)
        d = (x * 2.0).detach()
        assert not d.requires_grad
        (x * constant(d.data)).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0])

    def test_clamp_gradient_mask_inclusive(self):
        x = Tensor([-1.0, 0.0, 0.5, 1.0, 2.0], requires_grad=True)
        clamp(x, 0.0, 1.0).sum().backward()
        # boundary values pass gradient, strictly-outside values block it
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 1.0, 1.0, 0.0])

    def test_long_chain_no_recursion_blowup(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0
        y.sum().backward()
        np.testing.assert_array_equal(x.grad, [1.0])

    def test_repeated_backward_bitwise_identical(self):
        rng = np.random.default_rng(19)
        a = rng.standard_normal((4, 4))
        x = Tensor(a, requires_grad=True)
        loss = T.tanh(x @ x).var()
        loss.backward()
        g1 = x.grad.copy()
        x.zero_grad()
        loss.backward()
        np.testing.assert_array_equal(x.grad, g1)


class TestValidation:
    def test_non_finite_input_named(self):
        bad = np.array([1.0, np.nan, 3.0])
        with pytest.raises(NonFiniteError, match="flat index 1"):
            Tensor(bad)
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    def test_rank_limit(self):
        with pytest.raises(ShapeError, match="rank"):
            Tensor(np.zeros((1,) * 9))

    def test_broadcast_mismatch(self):
        with pytest.raises(ShapeError, match="broadcast"):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))

    def test_matmul_shape_errors(self):
        with pytest.raises(ShapeError, match="2-d"):
            Tensor(np.zeros((2, 2, 2))) @ Tensor(np.zeros((2, 2)))
        with pytest.raises(ShapeError, match="inner"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_log_sqrt_domain(self):
        with pytest.raises(DomainError):
            T.log(Tensor([0.0]))
        with pytest.raises(DomainError):
            T.sqrt(Tensor([-1.0]))

    def test_clamp_bad_interval(self):
        with pytest.raises(DomainError):
            clamp(Tensor([1.0]), 2.0, 2.0)

    def test_axis_errors(self):
        t = Tensor(np.zeros((2, 3)))
        with pytest.raises(ShapeError, match="out of range"):
            t.sum(axis=2)
        with pytest.raises(ShapeError, match="duplicate"):
            t.sum(axis=(0, 0))
        with pytest.raises(ShapeError, match="one axis"):
            softmax(t, axis=(0, 1))

    def test_mean_over_empty(self):
        with pytest.raises(ShapeError, match="empty"):
            Tensor(np.zeros((0, 3))).mean(axis=0)

    def test_reshape_size_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))).reshape(4, 2)

    def test_transpose_bad_permutation(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))).transpose(0, 0)

    def test_item_needs_scalar(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros(3)).item()

    def test_backward_needs_scalar_root(self):
        x = Tensor(np.zeros(3), requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            (x * 2.0).backward()

    def test_backward_needs_requires_grad(self):
        with pytest.raises(DualstreamError):
            Tensor([1.0]).sum().backward()
