"""Multi-scale channel fusion over the decoder pyramid and the seg head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .blocks import ChannelMix, PatchExpand, TokenGrid
from .module import Module, linear_param
from .tensor import ShapeError, Tensor, record_op


@dataclass
class DecoderPyramid:
    """Decoder outputs f1 (shallowest, largest grid) .. f4 (deepest)."""

    f1: TokenGrid
    f2: TokenGrid
    f3: TokenGrid
    f4: TokenGrid

    def __post_init__(self):
        seq = (self.f1, self.f2, self.f3, self.f4)
        for a, b in zip(seq, seq[1:]):
            if a.h != 2 * b.h or a.w_ != 2 * b.w_:
                raise ShapeError(
                    f"pyramid grids must halve per level, got {a.h}x{a.w_} "
                    f"then {b.h}x{b.w_}"
                )
        widths = {g.channels for g in seq}
        if len(widths) != 1:
            raise ShapeError(f"pyramid channel widths differ: {sorted(widths)}")


@dataclass
class SegOutput:
    logits: Tensor  # (B, n, H, W)
    n: int


def _axis_weights(src, dst, mode):
    """Convex interpolation matrix (dst, src), align-corners-false."""
    w = np.zeros((dst, src))
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    if mode == "nearest":
        idx = np.clip(np.floor((np.arange(dst) + 0.5) * src / dst), 0, src - 1)
        w[np.arange(dst), idx.astype(int)] = 1.0
        return w
    pos = np.clip(pos, 0.0, src - 1.0)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, src - 1)
    f = pos - i0
    w[np.arange(dst), i0] += 1.0 - f
    w[np.arange(dst), i1] += f
    return w


def bilinear_upsample(x: TokenGrid, target_h, target_w, mode="bilinear") -> TokenGrid:
    """Separable convex interpolation to a larger grid; channels independent."""
    if target_h < x.h or target_w < x.w_:
        raise ShapeError(
            f"upsample cannot shrink: {x.h}x{x.w_} -> {target_h}x{target_w}"
        )
    if target_h == x.h and target_w == x.w_:
        return x
    B, T, C = x.tokens.shape
    wr = _axis_weights(x.h, target_h, mode)
    wc = _axis_weights(x.w_, target_w, mode)
    xb = x.tokens.data.reshape(B, x.h, x.w_, C)
    t1 = np.einsum("oh,bhwc->bowc", wr, xb)
    out = np.einsum("pw,bowc->bopc", wc, t1)

    def bwd(g, needs):
        gb = g.reshape(B, target_h, target_w, C)
        g1 = np.einsum("pw,bopc->bowc", wc, gb)
        gx = np.einsum("oh,bowc->bhwc", wr, g1)
        return (gx.reshape(B, T, C),)

    tokens = record_op("upsample", (x.tokens,), out.reshape(B, target_h * target_w, C), bwd)
    return TokenGrid(tokens, target_h, target_w, stage=x.stage, factor=x.factor)


class Mscf(Module):
    """Align the four decoder scales to f1's grid, channel-mix each against
    the deepest scale as anchor key, and concatenate the enhanced maps on
    top of the concatenated originals residually. One shared mix by
    default; per-branch parameter sets behind a flag."""

    def __init__(self, dims, rng, mode="bilinear", hidden_ratio=4,
                 qshift_literal=False, per_branch_params=False):
        self.per_branch = per_branch_params
        if per_branch_params:
            self.mixes = [
                ChannelMix(dims, rng, hidden_ratio, qshift_literal)
                for _ in range(4)
            ]
        else:
            self.mix = ChannelMix(dims, rng, hidden_ratio, qshift_literal)
        self.mode = mode

    def __call__(self, pyr: DecoderPyramid) -> TokenGrid:
        f1 = pyr.f1
        aligned = [f1] + [
            bilinear_upsample(f, f1.h, f1.w_, self.mode)
            for f in (pyr.f2, pyr.f3, pyr.f4)
        ]
        anchor = aligned[3]
        base = tc.concat([g.tokens for g in aligned], axis=-1)
        branches = []
        for i, g in enumerate(aligned):
            mix = self.mixes[i] if self.per_branch else self.mix
            branches.append(mix(g, recv=g, key=anchor).tokens)
        enhanced = tc.concat(branches, axis=-1)
        return TokenGrid(tc.add(enhanced, base), f1.h, f1.w_, stage=f1.stage,
                         factor=f1.factor)


class SegHead(Module):
    """Patch-expand back to pixel resolution, then a 1x1 linear classifier.

    When fed the fused 4*dims MSCF output, a dims-restoring linear runs
    before the expansion.
    """

    def __init__(self, dims, n_classes, patch, rng, in_channels=None):
        in_channels = dims if in_channels is None else in_channels
        if in_channels != dims:
            self.reduce = linear_param(rng, in_channels, dims)
        else:
            self.reduce = None
        self.expand = PatchExpand(dims, rng, factor=patch)
        self.classifier = linear_param(rng, dims, n_classes)
        self.n_classes = n_classes

    def __call__(self, fused: TokenGrid) -> SegOutput:
        x = fused
        if self.reduce is not None:
            x = x.with_tokens(tc.matmul(x.tokens, self.reduce))
        full = self.expand(x)
        logits = tc.matmul(full.tokens, self.classifier)  # (B, H*W, n)
        B = full.batch
        grid = tc.reshape(logits, (B, full.h, full.w_, self.n_classes))
        return SegOutput(tc.transpose(grid, (0, 3, 1, 2)), self.n_classes)
