"""WKV kernel: oracle equivalence, stability, gradients, invariants."""

import numpy as np
import pytest

from urwkv import kernels
from urwkv.gradcheck import rel_err
from urwkv.tensor import ShapeError, Tape, parameter, tensor
from urwkv.wkv import (EmptySequenceError, MissingActivationsError, WkvParams,
                       bench_wkv, wkv_attention, wkv_backward, wkv_forward,
                       wkv_naive, wkv_scan)

BACKENDS = ["pure"] + (["ext"] if kernels.BACKEND == "ext" else [])


def direct_oracle(k, v, w, u):
    """Unshifted, literal evaluation of the attention formula.

    Only valid for small magnitudes; this is the independent reference the
    shifted implementations are checked against.
    """
    T, C = k.shape
    out = np.empty((T, C))
    for t in range(T):
        num = np.zeros(C)
        den = np.zeros(C)
        for i in range(T):
            if i == t:
                e = np.exp(u + k[t])
            else:
                e = np.exp(-(abs(t - i) - 1) / T * w + k[i])
            num += e * v[i]
            den += e
        out[t] = num / den
    return out


def random_case(rng, t_max=64, c_max=8, scale=1.0):
    T = int(rng.integers(1, t_max + 1))
    C = int(rng.integers(1, c_max + 1))
    k = rng.uniform(-scale, scale, (T, C))
    v = rng.uniform(-scale, scale, (T, C))
    params = WkvParams(rng.uniform(-scale, scale, C), rng.uniform(-scale, scale, C))
    return k, v, params


def mixed_rel_err(a, b):
    """max |a-b| / (1 + |b|): relative at scale, absolute near zero.

    Outputs are convex combinations of v (|v| <= 3), so unit flooring keeps
    the measure meaningful where entries cross zero; pure relative error is
    undefined there for any pair of correct implementations.
    """
    return float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))


class TestForward:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_naive_matches_direct_oracle(self, rng, backend):
        worst = 0.0
        for _ in range(40):
            k, v, p = random_case(rng)
            got = wkv_naive(k, v, p, backend=backend)
            ref = direct_oracle(k, v, p.w, p.u)
            worst = max(worst, mixed_rel_err(got, ref))
        assert worst < 1e-12

    def test_single_token_returns_value(self, rng):
        p = WkvParams(np.array([2.3]), np.array([-1.1]))
        k = np.array([[4.0]])
        v = np.array([[7.5]])
        assert wkv_naive(k, v, p)[0, 0] == pytest.approx(7.5, abs=1e-14)
        assert wkv_scan(k, v, p)[0, 0] == pytest.approx(7.5, abs=1e-14)

    def test_two_tokens_uniform_weights(self):
        p = WkvParams(np.zeros(2), np.zeros(2))
        k = np.zeros((2, 2))
        v = np.array([[1.0, 3.0], [5.0, -1.0]])
        expect = (v[0] + v[1]) / 2
        assert np.allclose(wkv_naive(k, v, p), [expect, expect], atol=1e-14)
        assert np.allclose(wkv_scan(k, v, p), [expect, expect], atol=1e-14)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_scan_matches_naive(self, rng, backend):
        worst = 0.0
        for _ in range(60):
            k, v, p = random_case(rng, t_max=256, c_max=32, scale=3.0)
            a = wkv_naive(k, v, p, backend=backend)
            b = wkv_scan(k, v, p, backend=backend)
            worst = max(worst, mixed_rel_err(b, a))
        assert worst < 1e-10

    def test_key_spike_stays_finite_and_matches(self, rng):
        k, v, p = random_case(rng, t_max=40, c_max=4)
        k[min(7, k.shape[0] - 1), 0] = 50.0
        a = wkv_naive(k, v, p)
        b = wkv_scan(k, v, p)
        assert np.isfinite(a).all() and np.isfinite(b).all()
        assert np.max(np.abs(a - b)) < 1e-10

    def test_empty_sequence_rejected(self):
        p = WkvParams(np.zeros(2), np.zeros(2))
        with pytest.raises(EmptySequenceError):
            wkv_naive(np.zeros((0, 2)), np.zeros((0, 2)), p)

    def test_params_validation(self):
        with pytest.raises(ShapeError):
            WkvParams(np.zeros(3), np.zeros(2))
        with pytest.raises(ValueError):
            WkvParams(np.array([np.inf]), np.zeros(1))
        p = WkvParams(np.zeros(3), np.zeros(3))
        with pytest.raises(ShapeError):
            wkv_naive(np.zeros((4, 2)), np.zeros((4, 2)), p)

    def test_backends_bit_compatible(self, rng):
        if kernels.BACKEND != "ext":
            pytest.skip("compiled backend not built")
        for _ in range(20):
            k, v, p = random_case(rng, scale=3.0)
            for fn in (wkv_naive, wkv_scan):
                a = fn(k, v, p, backend="ext")
                b = fn(k, v, p, backend="pure")
                assert np.max(np.abs(a - b)) < 1e-13


class TestInvariants:
    def test_convex_combination_bounds(self, rng):
        for _ in range(20):
            k, v, p = random_case(rng, scale=3.0)
            out = wkv_scan(k, v, p)
            lo = v.min(axis=0) - 1e-12
            hi = v.max(axis=0) + 1e-12
            assert (out >= lo).all() and (out <= hi).all()

    def test_permutation_symmetry_at_zero_decay(self, rng):
        T, C = 17, 3
        v = rng.uniform(-1, 1, (T, C))
        k = np.full((T, C), 0.4)
        p = WkvParams(np.zeros(C), np.zeros(C))
        out = wkv_scan(k, v, p)
        assert np.allclose(out, v.mean(axis=0), atol=1e-12)
        perm = rng.permutation(T)
        out_p = wkv_scan(k, v[perm], p)
        assert np.allclose(out_p, out, atol=1e-12)

    def test_translation_invariance_in_k(self, rng):
        k, v, p = random_case(rng, t_max=32, c_max=4)
        kappa = rng.uniform(-2, 2, k.shape[1])
        a = wkv_scan(k, v, p)
        b = wkv_scan(k + kappa, v, p)
        assert rel_err(b, a) < 1e-11

    def test_extreme_keys_stable(self, rng):
        T, C = 24, 3
        k = rng.uniform(-80, 80, (T, C))
        v = rng.uniform(-1, 1, (T, C))
        p = WkvParams(rng.uniform(-3, 3, C), rng.uniform(-3, 3, C))
        for fn in (wkv_naive, wkv_scan):
            out = fn(k, v, p)
            assert np.isfinite(out).all()


class TestBackward:
    @pytest.mark.parametrize("form", ["naive", "scan"])
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_zero_upstream_gives_zero(self, rng, form, backend):
        k, v, p = random_case(rng, t_max=12, c_max=3)
        out, saved = wkv_forward(k, v, p, form=form, backend=backend)
        grads = wkv_backward(k, v, p, np.zeros_like(k), saved, form=form,
                             backend=backend)
        for g in grads:
            assert np.array_equal(g, np.zeros_like(g))

    @pytest.mark.parametrize("form", ["naive", "scan"])
    def test_single_token_gradients(self, rng, form):
        p = WkvParams(np.array([0.3, -0.7]), np.array([0.2, 0.9]))
        k = rng.uniform(-1, 1, (1, 2))
        v = rng.uniform(-1, 1, (1, 2))
        g = rng.uniform(-1, 1, (1, 2))
        out, saved = wkv_forward(k, v, p, form=form)
        dk, dv, dw, du = wkv_backward(k, v, p, g, saved, form=form)
        assert np.allclose(dv, g, atol=1e-14)
        assert np.allclose(dk, 0.0, atol=1e-14)
        assert np.allclose(du, 0.0, atol=1e-14)
        assert np.allclose(dw, 0.0, atol=1e-14)

    @pytest.mark.parametrize("form", ["naive", "scan"])
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_gradients_match_finite_differences(self, rng, form, backend):
        T, C = 8, 3
        k = rng.uniform(-1, 1, (T, C))
        v = rng.uniform(-1, 1, (T, C))
        p = WkvParams(rng.uniform(-1, 1, C), rng.uniform(-1, 1, C))
        g = rng.uniform(-1, 1, (T, C))
        out, saved = wkv_forward(k, v, p, form=form, backend=backend)
        analytic = wkv_backward(k, v, p, g, saved, form=form, backend=backend)

        def loss(kk, vv, ww, uu):
            return float((direct_oracle(kk, vv, ww, uu) * g).sum())

        arrays = [k, v, p.w, p.u]
        h = 1e-6
        for idx, ana in enumerate(analytic):
            num = np.zeros_like(arrays[idx])
            flat = arrays[idx].reshape(-1)
            nflat = num.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = loss(*arrays)
                flat[i] = orig - h
                fm = loss(*arrays)
                flat[i] = orig
                nflat[i] = (fp - fm) / (2 * h)
            assert rel_err(ana, num) < 1e-6

    def test_forms_agree_on_gradients(self, rng):
        for _ in range(10):
            k, v, p = random_case(rng, t_max=40, c_max=5, scale=2.0)
            g = rng.uniform(-1, 1, k.shape)
            _, saved_n = wkv_forward(k, v, p, form="naive")
            _, saved_s = wkv_forward(k, v, p, form="scan")
            gn = wkv_backward(k, v, p, g, saved_n, form="naive")
            gs = wkv_backward(k, v, p, g, saved_s, form="scan")
            for a, b in zip(gn, gs):
                assert rel_err(a, b) < 1e-9

    def test_missing_saved_activations(self, rng):
        k, v, p = random_case(rng, t_max=4, c_max=2)
        with pytest.raises(MissingActivationsError):
            wkv_backward(k, v, p, np.zeros_like(k), None)


class TestTapedOp:
    def test_batched_attention_grad_flow(self, rng):
        B, T, C = 2, 6, 4
        k = parameter(rng.uniform(-1, 1, (B, T, C)))
        v = parameter(rng.uniform(-1, 1, (B, T, C)))
        w = parameter(rng.uniform(-1, 1, C))
        u = parameter(rng.uniform(-1, 1, C))
        from urwkv import tensor as tc
        with Tape() as tape:
            out = wkv_attention(k, v, w, u)
            loss = tc.sum_(tc.mul(out, out))
        tape.backward(loss)
        for p in (k, v, w, u):
            assert p.grad is not None and p.grad.shape == p.data.shape

    def test_batch_matches_per_sample(self, rng):
        B, T, C = 3, 10, 4
        k = rng.uniform(-1, 1, (B, T, C))
        v = rng.uniform(-1, 1, (B, T, C))
        p = WkvParams(rng.uniform(-1, 1, C), rng.uniform(-1, 1, C))
        out = wkv_attention(tensor(k), tensor(v), tensor(p.w), tensor(p.u))
        for b in range(B):
            assert np.allclose(out.data[b], wkv_scan(k[b], v[b], p), atol=1e-12)


class TestBench:
    def test_single_t_one_row_per_form(self):
        rows = bench_wkv([64], 4, 1)
        assert len(rows) == 2
        assert {r[0] for r in rows} == {"naive", "scan"}

    def test_zero_repetitions_rejected(self):
        with pytest.raises(ValueError):
            bench_wkv([64], 4, 0)

    def test_unsorted_t_list_rejected(self):
        with pytest.raises(ValueError):
            bench_wkv([128, 64], 4, 1)
