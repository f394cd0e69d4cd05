"""Tensor engine: op semantics, tape backward, AdamW."""

import numpy as np
import pytest

import urwkv.tensor as tc
from urwkv.gradcheck import check_grads
from urwkv.optim import AdamWState
from urwkv.tensor import (NonFiniteError, ShapeError, Tape, TapeError, Tensor,
                          parameter, tensor)


def matmul_oracle(a, b):
    """Triple-loop reference product."""
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for p in range(k):
                out[i, j] += a[i, p] * b[p, j]
    return out


class TestMatmul:
    def test_identity(self, rng):
        b = rng.uniform(-1, 1, (3, 5))
        out = tc.matmul(tensor(np.eye(3)), tensor(b))
        assert np.array_equal(out.data, b)

    def test_zeros(self, rng):
        a = rng.uniform(-1, 1, (4, 3))
        out = tc.matmul(tensor(a), tensor(np.zeros((3, 2))))
        assert np.array_equal(out.data, np.zeros((4, 2)))

    def test_against_triple_loop(self, rng):
        a = rng.uniform(-2, 2, (4, 5))
        b = rng.uniform(-2, 2, (5, 3))
        out = tc.matmul(tensor(a), tensor(b))
        assert np.max(np.abs(out.data - matmul_oracle(a, b))) < 1e-12

    def test_shape_mismatch_message(self):
        with pytest.raises(ShapeError) as exc:
            tc.matmul(tensor(np.zeros((2, 3))), tensor(np.zeros((4, 2))))
        assert "(2, 3)" in str(exc.value) and "(4, 2)" in str(exc.value)


class TestLayerNorm:
    def test_constant_input_stabilized(self):
        x = tensor(np.full((2, 6), 3.7))
        out = tc.layer_norm(x, tensor(np.ones(6)), tensor(np.zeros(6)))
        assert np.allclose(out.data, 0.0)

    def test_two_point_case(self):
        x = tensor(np.array([[1.0, -1.0]]))
        out = tc.layer_norm(x, tensor(np.ones(2)), tensor(np.zeros(2)))
        expect = 1.0 / np.sqrt(1.0 + 1e-5)
        assert np.allclose(out.data, [[expect, -expect]], atol=1e-12)
        assert abs(out.data[0, 0] - 0.999995) < 1e-6

    def test_statistics(self, rng):
        # wide inputs so the eps bias on the variance stays below tolerance
        x = tensor(rng.uniform(-20, 20, (4, 9, 32)))
        out = tc.layer_norm(x, tensor(np.ones(32)), tensor(np.zeros(32)))
        mean = out.data.mean(axis=-1)
        var = out.data.var(axis=-1)
        assert np.abs(mean).max() < 1e-10
        assert np.abs(var - 1.0).max() < 1e-6

    def test_affine_shape_check(self):
        with pytest.raises(ShapeError):
            tc.layer_norm(tensor(np.zeros((2, 4))), tensor(np.ones(3)),
                          tensor(np.zeros(4)))


class TestActivations:
    def test_sigmoid_zero(self):
        assert tc.sigmoid(tensor(np.zeros(3))).data[0] == 0.5

    def test_squared_relu_values(self):
        out = tc.squared_relu(tensor(np.array([-3.0, 2.0])))
        assert out.data[0] == 0.0 and out.data[1] == 4.0

    def test_squared_relu_grad_at_two(self):
        x = parameter(np.array([2.0]))
        with Tape() as tape:
            loss = tc.sum_(tc.squared_relu(x))
        tape.backward(loss)
        assert abs(x.grad[0] - 4.0) < 1e-12
        err = check_grads(lambda a: tc.sum_(tc.squared_relu(a)), [np.array([2.0])])
        assert err < 1e-8


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = parameter(rng.uniform(-1, 1, (3, 4)))
        with Tape() as tape:
            loss = tc.sum_(x)
        tape.backward(loss)
        assert np.array_equal(x.grad, np.ones((3, 4)))

    def test_square_gives_two_x(self, rng):
        x = parameter(rng.uniform(-1, 1, (5,)))
        with Tape() as tape:
            loss = tc.sum_(tc.mul(x, x))
        tape.backward(loss)
        assert np.allclose(x.grad, 2 * x.data, atol=1e-14)

    def test_composite_graph_vs_finite_difference(self, rng):
        a = rng.uniform(-2, 2, (3, 4))
        b = rng.uniform(-2, 2, (4, 4))
        g = rng.uniform(0.5, 1.5, 4)
        be = rng.uniform(-0.5, 0.5, 4)

        def build(aa, bb, gg, bbe):
            h = tc.matmul(aa, bb)
            h = tc.layer_norm(h, gg, bbe)
            return tc.sum_(tc.sigmoid(h))

        assert check_grads(build, [a, b, g, be]) < 1e-6

    def test_shared_subexpression_accumulates(self, rng):
        x_val = rng.uniform(-1, 1, (4,))

        def f(x):
            return tc.sigmoid(tc.mul(x, x))

        x1 = parameter(x_val.copy())
        with Tape() as tape:
            shared = f(x1)
            loss = tc.sum_(tc.add(shared, shared))
        tape.backward(loss)

        x2 = parameter(x_val.copy())
        with Tape() as tape2:
            loss2 = tc.sum_(tc.affine(f(x2), 2.0))
        tape2.backward(loss2)
        assert np.allclose(x1.grad, x2.grad, atol=1e-14)

    def test_backward_twice_is_error(self):
        x = parameter(np.ones(3))
        with Tape() as tape:
            loss = tc.sum_(x)
        tape.backward(loss)
        with pytest.raises(TapeError):
            tape.backward(loss)

    def test_non_scalar_loss_is_error(self):
        x = parameter(np.ones(3))
        with Tape() as tape:
            y = tc.mul(x, x)
        with pytest.raises(TapeError):
            tape.backward(y)

    def test_detached_loss_is_error(self):
        x = parameter(np.ones(3))
        with Tape() as tape:
            tc.mul(x, x)
        detached = tc.sum_(x)  # built outside the tape
        with pytest.raises(TapeError):
            tape.backward(detached)


class TestDeterminism:
    def test_ops_bit_identical(self, rng):
        a = rng.uniform(-2, 2, (16, 16))
        b = rng.uniform(-2, 2, (16, 16))
        r1 = tc.matmul(tensor(a), tensor(b)).data
        r2 = tc.matmul(tensor(a), tensor(b)).data
        assert np.array_equal(r1, r2)
        s1 = tc.sigmoid(tensor(a)).data
        s2 = tc.sigmoid(tensor(a)).data
        assert np.array_equal(s1, s2)


class TestDebugSentinel:
    def test_overflow_caught(self):
        with pytest.raises(NonFiniteError):
            tc.exp(tensor(np.array([1000.0])))

    def test_nan_caught(self):
        with pytest.raises(NonFiniteError):
            tc.log(tensor(np.array([-1.0])))


class TestAdamW:
    def test_zero_grad_zero_decay_no_change(self):
        p = parameter(np.array([1.5, -2.0]), name="p")
        p.grad = np.zeros(2)
        opt = AdamWState({"p": p}, lr=0.1, weight_decay=0.0)
        opt.step()
        assert np.array_equal(p.data, [1.5, -2.0])

    def test_first_step_moves_by_lr(self):
        p = parameter(np.array([1.0]), name="p")
        p.grad = np.ones(1)
        opt = AdamWState({"p": p}, lr=0.1, betas=(0.9, 0.999), weight_decay=0.0)
        opt.step()
        # bias-corrected first step: update = lr * g / (|g| + eps)
        assert abs(p.data[0] - 0.9) < 1e-6

    def test_decay_only(self):
        p = parameter(np.array([1.0]), name="p")
        p.grad = np.zeros(1)
        opt = AdamWState({"p": p}, lr=0.1, weight_decay=0.01)
        opt.step()
        assert abs(p.data[0] - 0.999) < 1e-15

    def test_moment_shapes_checked(self):
        p = parameter(np.ones((2, 2)), name="p")
        p.grad = np.ones(3)
        opt = AdamWState({"p": p}, lr=0.1)
        with pytest.raises(ShapeError):
            opt.step()

    def test_frozen_params_untouched(self):
        p = parameter(np.array([1.0]), name="enc.p")
        q = parameter(np.array([1.0]), name="dec.q")
        p.grad = np.ones(1)
        q.grad = np.ones(1)
        opt = AdamWState({"enc.p": p, "dec.q": q}, lr=0.1, weight_decay=0.0)
        opt.set_frozen({"enc.p"})
        opt.step()
        assert p.data[0] == 1.0
        assert q.data[0] != 1.0


class TestTensorBasics:
    def test_invariant_size_matches_shape(self, rng):
        t = tensor(rng.uniform(-1, 1, (3, 4, 5)))
        assert t.size == 60 and int(np.prod(t.shape)) == t.size

    def test_item_requires_scalar(self):
        with pytest.raises(ShapeError):
            tensor(np.zeros(3)).item()
