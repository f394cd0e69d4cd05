"""The named finite-difference suite behind `urwkv gradcheck` and the
gradient acceptance criterion.

Every differentiable operation gets its taped gradient compared against
central differences on random inputs in [-2, 2]; composite modules also
get a handful of parameter entries spot-checked through a full
forward/backward. Tolerances: 1e-6 for primitive ops, 1e-5 for module
compositions, 1e-4 for the end-to-end micro model.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tc
from .blocks import (ChannelMix, PatchEmbed, PatchExpand, PatchMerge,
                     QShiftParams, SpatialMix, TokenGrid, VrwkvBlock, q_shift,
                     shift4)
from .config import ModelConfig
from .fusion import DecoderPyramid, Mscf, SegHead, bilinear_upsample
from .gradcheck import check_grads, spot_check_params
from .metrics import ce_dice_loss
from .model import build_model
from .tensor import Tape, Tensor
from .wavelet import Fawa, haar_dwt, haar_idwt
from .wkv import wkv_attention

OP_TOL = 1e-6
MODULE_TOL = 1e-5
E2E_TOL = 1e-4


def _weighted(x, r):
    """Scalarize with fixed random weights so every output entry matters."""
    return tc.sum_(tc.mul(x, tc.tensor(r)))


def _grid(arr, h, w):
    return TokenGrid(arr if isinstance(arr, Tensor) else tc.tensor(arr), h, w)


def _module_param_err(build_loss, params, rng, n=6, h=1e-4):
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    err, _ = spot_check_params(lambda: build_loss().item(), params, n, rng, h=h)
    return err


# ---------------------------------------------------------------------------
# Primitive op checks
# ---------------------------------------------------------------------------

def check_matmul(rng):
    a = rng.uniform(-2, 2, (4, 5))
    b = rng.uniform(-2, 2, (5, 3))
    r = rng.uniform(-1, 1, (4, 3))
    return check_grads(lambda x, y: _weighted(tc.matmul(x, y), r), [a, b])


def check_matmul_batched(rng):
    a = rng.uniform(-2, 2, (2, 6, 4))
    b = rng.uniform(-2, 2, (4, 3))
    r = rng.uniform(-1, 1, (2, 6, 3))
    return check_grads(lambda x, y: _weighted(tc.matmul(x, y), r), [a, b])


def check_layer_norm(rng):
    x = rng.uniform(-2, 2, (3, 7, 5))
    gamma = rng.uniform(0.5, 1.5, 5)
    beta = rng.uniform(-0.5, 0.5, 5)
    r = rng.uniform(-1, 1, (3, 7, 5))
    return check_grads(
        lambda a, g, b: _weighted(tc.layer_norm(a, g, b), r), [x, gamma, beta]
    )


def check_sigmoid(rng):
    x = rng.uniform(-2, 2, (4, 6))
    r = rng.uniform(-1, 1, (4, 6))
    return check_grads(lambda a: _weighted(tc.sigmoid(a), r), [x])


def check_squared_relu(rng):
    x = rng.uniform(-2, 2, (4, 6))
    r = rng.uniform(-1, 1, (4, 6))
    return check_grads(lambda a: _weighted(tc.squared_relu(a), r), [x])


def check_exp_log(rng):
    x = rng.uniform(-2, 2, (3, 5))
    y = rng.uniform(0.2, 2.5, (3, 5))
    r = rng.uniform(-1, 1, (3, 5))
    e1 = check_grads(lambda a: _weighted(tc.exp(a), r), [x])
    e2 = check_grads(lambda a: _weighted(tc.log(a), r), [y])
    return max(e1, e2)


def check_elementwise(rng):
    a = rng.uniform(-2, 2, (3, 4))
    b = rng.uniform(-2, 2, (3, 4))
    c = rng.uniform(0.5, 2.0, (3, 4))
    v = rng.uniform(-2, 2, 4)  # broadcast pattern used by position/channel params
    r = rng.uniform(-1, 1, (3, 4))
    errs = [
        check_grads(lambda x, y: _weighted(tc.add(x, y), r), [a, b]),
        check_grads(lambda x, y: _weighted(tc.sub(x, y), r), [a, b]),
        check_grads(lambda x, y: _weighted(tc.mul(x, y), r), [a, b]),
        check_grads(lambda x, y: _weighted(tc.div(x, y), r), [a, c]),
        check_grads(lambda x, y: _weighted(tc.mul(x, y), r), [a, v]),
        check_grads(lambda x: _weighted(tc.affine(x, -1.7, 0.3), r), [a]),
    ]
    return max(errs)


def check_reductions_shapes(rng):
    x = rng.uniform(-2, 2, (2, 3, 4))
    r0 = rng.uniform(-1, 1, (3, 4))
    r1 = rng.uniform(-1, 1, (2, 4, 3))
    r2 = rng.uniform(-1, 1, (2, 12))
    errs = [
        check_grads(lambda a: tc.sum_(a), [x]),
        check_grads(lambda a: _weighted(tc.sum_(a, axis=0), r0), [x]),
        check_grads(lambda a: tc.sum_(tc.mean_(a, axis=(0, 2))), [x]),
        check_grads(lambda a: _weighted(tc.transpose(a, (0, 2, 1)), r1), [x]),
        check_grads(lambda a: _weighted(tc.reshape(a, (2, 12)), r2), [x]),
    ]
    return max(errs)


def check_concat_slice(rng):
    a = rng.uniform(-2, 2, (3, 4))
    b = rng.uniform(-2, 2, (3, 2))
    r = rng.uniform(-1, 1, (3, 6))
    r2 = rng.uniform(-1, 1, (3, 3))
    errs = [
        check_grads(lambda x, y: _weighted(tc.concat([x, y], axis=-1), r), [a, b]),
        check_grads(lambda x: _weighted(tc.slice_axis(x, -1, 1, 4), r2), [a]),
    ]
    return max(errs)


def check_log_softmax(rng):
    x = rng.uniform(-2, 2, (2, 5, 3))
    r = rng.uniform(-1, 1, (2, 5, 3))
    return check_grads(lambda a: _weighted(tc.log_softmax(a, axis=1), r), [x])


def check_clip01(rng):
    # keep entries away from the clamp corners where fd is one-sided
    x = rng.uniform(0.05, 0.95, (4, 4))
    x[0, 0] = -0.8
    x[1, 1] = 1.7
    r = rng.uniform(-1, 1, (4, 4))
    return check_grads(lambda a: _weighted(tc.clip01(a), r), [x])


def check_shift4(rng):
    x = rng.uniform(-2, 2, (2, 12, 8))
    r = rng.uniform(-1, 1, (2, 12, 8))
    return check_grads(lambda a: _weighted(shift4(a, 3, 4), r), [x])


def check_q_shift(rng):
    x = rng.uniform(-2, 2, (2, 12, 8))
    mu = rng.uniform(0.1, 0.9, 8)
    r = rng.uniform(-1, 1, (2, 12, 8))

    def build(a, m):
        qp = QShiftParams.__new__(QShiftParams)
        qp.mu = m
        return _weighted(q_shift(_grid(a, 3, 4), qp).tokens, r)

    return check_grads(build, [x, mu])


def check_wkv(rng):
    T, C = 8, 3
    k = rng.uniform(-2, 2, (1, T, C))
    v = rng.uniform(-2, 2, (1, T, C))
    w = rng.uniform(-2, 2, C)
    u = rng.uniform(-2, 2, C)
    r = rng.uniform(-1, 1, (1, T, C))
    errs = []
    for form in ("scan", "naive"):
        errs.append(check_grads(
            lambda kk, vv, ww, uu: _weighted(
                wkv_attention(kk, vv, ww, uu, form=form), r),
            [k, v, w, u],
        ))
    return max(errs)


def check_dwt_idwt(rng):
    x = rng.uniform(-2, 2, (2, 16, 4))
    r = rng.uniform(-1, 1, (2, 4, 4))
    rr = rng.uniform(-1, 1, (2, 16, 4))

    def build_dwt(a):
        bands = haar_dwt(_grid(a, 4, 4))
        return _weighted(bands.hh.tokens, r)

    def build_round(a):
        bands = haar_dwt(_grid(a, 4, 4))
        return _weighted(haar_idwt(bands).tokens, rr)

    return max(check_grads(build_dwt, [x]), check_grads(build_round, [x]))


def check_bilinear(rng):
    x = rng.uniform(-2, 2, (2, 6, 3))
    r = rng.uniform(-1, 1, (2, 20, 3))
    return check_grads(
        lambda a: _weighted(bilinear_upsample(_grid(a, 2, 3), 4, 5).tokens, r),
        [x],
    )


def check_loss(rng):
    logits = rng.uniform(-2, 2, (2, 3, 4, 4))
    mask = rng.integers(0, 3, (2, 4, 4))
    return check_grads(lambda lg: ce_dice_loss(lg, mask), [logits])


# ---------------------------------------------------------------------------
# Module compositions (input grads + sampled parameter grads)
# ---------------------------------------------------------------------------

def check_spatial_mix(rng):
    mix = SpatialMix(8, np.random.default_rng(11))
    x = rng.uniform(-2, 2, (1, 16, 8))
    r = rng.uniform(-1, 1, (1, 16, 8))
    e_in = check_grads(lambda a: _weighted(mix(_grid(a, 4, 4)).tokens, r), [x])
    xt = tc.tensor(x)
    e_par = _module_param_err(
        lambda: _weighted(mix(_grid(xt, 4, 4)).tokens, r),
        mix.param_dict(), rng,
    )
    return max(e_in, e_par)


def check_channel_mix(rng):
    mix = ChannelMix(8, np.random.default_rng(12))
    x = rng.uniform(-2, 2, (1, 16, 8))
    key = rng.uniform(-2, 2, (1, 16, 8))
    r = rng.uniform(-1, 1, (1, 16, 8))
    e_in = check_grads(
        lambda a, b: _weighted(mix(_grid(a, 4, 4), key=_grid(b, 4, 4)).tokens, r),
        [x, key],
    )
    xt = tc.tensor(x)
    e_par = _module_param_err(
        lambda: _weighted(mix(_grid(xt, 4, 4)).tokens, r),
        mix.param_dict(), rng,
    )
    return max(e_in, e_par)


def check_block(rng):
    blk = VrwkvBlock(8, np.random.default_rng(13))
    x = rng.uniform(-2, 2, (1, 16, 8))
    r = rng.uniform(-1, 1, (1, 16, 8))
    return check_grads(lambda a: _weighted(blk(_grid(a, 4, 4)).tokens, r), [x])


def check_patch_ops(rng):
    rng2 = np.random.default_rng(14)
    embed = PatchEmbed(4, 8, 2, 2, rng2)
    merge = PatchMerge(8, rng2)
    expand = PatchExpand(8, rng2, factor=2)
    img = rng.uniform(-2, 2, (1, 3, 8, 8))
    re = rng.uniform(-1, 1, (1, 4, 8))
    x = rng.uniform(-2, 2, (1, 16, 8))
    rm = rng.uniform(-1, 1, (1, 4, 8))
    rx = rng.uniform(-1, 1, (1, 64, 8))
    errs = [
        check_grads(lambda a: _weighted(embed(a).tokens, re), [img]),
        check_grads(lambda a: _weighted(merge(_grid(a, 4, 4)).tokens, rm), [x]),
        check_grads(lambda a: _weighted(expand(_grid(a, 4, 4)).tokens, rx), [x]),
    ]
    return max(errs)


def check_fawa(rng):
    fawa = Fawa(8, np.random.default_rng(15))
    x = rng.uniform(-2, 2, (1, 16, 8))
    r = rng.uniform(-1, 1, (1, 16, 8))
    e_in = check_grads(lambda a: _weighted(fawa(_grid(a, 4, 4)).tokens, r), [x])
    xt = tc.tensor(x)
    e_par = _module_param_err(
        lambda: _weighted(fawa(_grid(xt, 4, 4)).tokens, r),
        fawa.param_dict(), rng,
    )
    return max(e_in, e_par)


def check_mscf(rng):
    mscf = Mscf(8, np.random.default_rng(16))
    f1 = rng.uniform(-2, 2, (1, 64, 8))
    f2 = rng.uniform(-2, 2, (1, 16, 8))
    f3 = rng.uniform(-2, 2, (1, 4, 8))
    f4 = rng.uniform(-2, 2, (1, 1, 8))
    r = rng.uniform(-1, 1, (1, 64, 32))

    def build(a1, a2, a3, a4):
        pyr = DecoderPyramid(_grid(a1, 8, 8), _grid(a2, 4, 4),
                             _grid(a3, 2, 2), _grid(a4, 1, 1))
        return _weighted(mscf(pyr).tokens, r)

    e_in = check_grads(build, [f1, f2, f3, f4])
    ts = [tc.tensor(f) for f in (f1, f2, f3, f4)]
    e_par = _module_param_err(
        lambda: build(*ts), mscf.param_dict(), rng,
    )
    return max(e_in, e_par)


def check_seg_head(rng):
    head = SegHead(8, 2, 4, np.random.default_rng(17), in_channels=32)
    x = rng.uniform(-2, 2, (1, 4, 32))
    r = rng.uniform(-1, 1, (1, 2, 8, 8))
    return check_grads(
        lambda a: _weighted(head(_grid(a, 2, 2)).logits, r), [x]
    )


# ---------------------------------------------------------------------------
# End-to-end micro model
# ---------------------------------------------------------------------------

def _model_spot_check(cfg, n_samples, rng, image_size):
    model = build_model(cfg, seed=5)
    img = tc.tensor(rng.uniform(0, 1, (1, 3, image_size, image_size)))
    mask = rng.integers(0, cfg.classes, (1, image_size, image_size))

    def build_loss():
        return ce_dice_loss(model(img), mask)

    params = model.param_dict()
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    err, _ = spot_check_params(lambda: build_loss().item(), params,
                               n_samples, rng, h=1e-4)
    return err


def check_model_end_to_end(rng):
    cfg = ModelConfig(variant="base", dims=8, image_size=32,
                      depths=(1, 1, 1, 1), decoder_depths=(1, 1, 1, 1)).validate()
    return _model_spot_check(cfg, 20, rng, 32)


def check_model_dagger_end_to_end(rng):
    cfg = ModelConfig(variant="dagger", dims=8, image_size=64, fawa=True,
                      mscf=True, depths=(1, 1, 1, 1),
                      decoder_depths=(1, 1, 1, 1)).validate()
    return _model_spot_check(cfg, 10, rng, 64)


ALL_CHECKS = [
    ("matmul", check_matmul, OP_TOL),
    ("matmul_batched", check_matmul_batched, OP_TOL),
    ("layer_norm", check_layer_norm, OP_TOL),
    ("sigmoid", check_sigmoid, OP_TOL),
    ("squared_relu", check_squared_relu, OP_TOL),
    ("exp_log", check_exp_log, OP_TOL),
    ("elementwise", check_elementwise, OP_TOL),
    ("reductions_shapes", check_reductions_shapes, OP_TOL),
    ("concat_slice", check_concat_slice, OP_TOL),
    ("log_softmax", check_log_softmax, OP_TOL),
    ("clip01", check_clip01, OP_TOL),
    ("shift4", check_shift4, OP_TOL),
    ("q_shift", check_q_shift, OP_TOL),
    ("wkv", check_wkv, MODULE_TOL),
    ("dwt_idwt", check_dwt_idwt, OP_TOL),
    ("bilinear_upsample", check_bilinear, OP_TOL),
    ("ce_dice_loss", check_loss, MODULE_TOL),
    ("spatial_mix", check_spatial_mix, MODULE_TOL),
    ("channel_mix", check_channel_mix, MODULE_TOL),
    ("vrwkv_block", check_block, MODULE_TOL),
    ("patch_ops", check_patch_ops, MODULE_TOL),
    ("fawa", check_fawa, MODULE_TOL),
    ("mscf", check_mscf, MODULE_TOL),
    ("seg_head", check_seg_head, MODULE_TOL),
    ("model_base_32px", check_model_end_to_end, E2E_TOL),
    ("model_dagger_64px", check_model_dagger_end_to_end, E2E_TOL),
]


def run_all_checks(verbose=False, seed=1234):
    failures = 0
    for name, fn, tol in ALL_CHECKS:
        rng = np.random.default_rng(seed)
        err = fn(rng)
        ok = err < tol
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}: max rel err {err:.3e} "
                  f"(tol {tol:.0e})")
        if not ok:
            failures += 1
    return failures
