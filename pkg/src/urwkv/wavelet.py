"""Orthonormal 2D Haar analysis/synthesis and wavelet sub-band attention.

Per channel, each 2x2 block [[a, b], [c, d]] maps to
    LL = (a+b+c+d)/2,  LH = (a-b+c-d)/2,
    HL = (a+b-c-d)/2,  HH = (a-b-c+d)/2,
an orthogonal transform, so synthesis is both the inverse and the adjoint:
the backward pass of the analysis op is the synthesis op and vice versa.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .blocks import SpatialMix, TokenGrid
from .module import Module
from .tensor import ShapeError, record_op

BAND_ORDER = ("ll", "lh", "hl", "hh")


def _analyze(xb):
    """(B, h, w, C) -> (B, h/2, w/2, 4C) with bands stacked on channels."""
    a = xb[:, 0::2, 0::2]
    b = xb[:, 0::2, 1::2]
    c = xb[:, 1::2, 0::2]
    d = xb[:, 1::2, 1::2]
    ll = (a + b + c + d) * 0.5
    lh = (a - b + c - d) * 0.5
    hl = (a + b - c - d) * 0.5
    hh = (a - b - c + d) * 0.5
    return np.concatenate([ll, lh, hl, hh], axis=-1)


def _synthesize(sb):
    """(B, h/2, w/2, 4C) -> (B, h, w, C); exact inverse of _analyze."""
    B, h2, w2, c4 = sb.shape
    C = c4 // 4
    ll, lh, hl, hh = (sb[..., i * C:(i + 1) * C] for i in range(4))
    out = np.empty((B, h2 * 2, w2 * 2, C))
    out[:, 0::2, 0::2] = (ll + lh + hl + hh) * 0.5
    out[:, 0::2, 1::2] = (ll - lh + hl - hh) * 0.5
    out[:, 1::2, 0::2] = (ll + lh - hl - hh) * 0.5
    out[:, 1::2, 1::2] = (ll - lh - hl + hh) * 0.5
    return out


def dwt_stack(x, h, w):
    """Taped analysis: (B, T, C) tokens -> (B, T/4, 4C) stacked bands."""
    B, T, C = x.shape
    out = _analyze(x.data.reshape(B, h, w, C))

    def bwd(g, needs):
        gx = _synthesize(g.reshape(B, h // 2, w // 2, 4 * C))
        return (gx.reshape(B, T, C),)

    return record_op("dwt", (x,), out.reshape(B, T // 4, 4 * C), bwd)


def idwt_stack(x, h2, w2):
    """Taped synthesis: (B, T/4, 4C) stacked bands -> (B, T, C) tokens."""
    B, T4, C4 = x.shape
    C = C4 // 4
    out = _synthesize(x.data.reshape(B, h2, w2, C4))

    def bwd(g, needs):
        gx = _analyze(g.reshape(B, h2 * 2, w2 * 2, C))
        return (gx.reshape(B, T4, C4),)

    return record_op("idwt", (x,), out.reshape(B, T4 * 4, C), bwd)


@dataclass
class SubBands:
    ll: TokenGrid
    lh: TokenGrid
    hl: TokenGrid
    hh: TokenGrid

    def __iter__(self):
        return iter((self.ll, self.lh, self.hl, self.hh))


def haar_dwt(x: TokenGrid) -> SubBands:
    """Single-level analysis into four half-resolution sub-band grids."""
    if x.h % 2 or x.w_ % 2:
        raise ShapeError(f"haar_dwt needs an even grid, got {x.h}x{x.w_}")
    C = x.channels
    stacked = dwt_stack(x.tokens, x.h, x.w_)
    h2, w2 = x.h // 2, x.w_ // 2
    grids = []
    for i in range(4):
        band = tc.slice_axis(stacked, -1, i * C, (i + 1) * C)
        grids.append(TokenGrid(band, h2, w2, stage=x.stage, factor=x.factor))
    return SubBands(*grids)


def haar_idwt(bands: SubBands) -> TokenGrid:
    """Exact inverse of haar_dwt."""
    shapes = {(g.h, g.w_, g.channels) for g in bands}
    if len(shapes) != 1:
        raise ShapeError(f"sub-band shapes differ: {sorted(shapes)}")
    ref = bands.ll
    stacked = tc.concat([g.tokens for g in bands], axis=-1)
    tokens = idwt_stack(stacked, ref.h, ref.w_)
    return TokenGrid(tokens, ref.h * 2, ref.w_ * 2, stage=ref.stage,
                     factor=ref.factor)


class Fawa(Module):
    """Frequency-aware wavelet attention over skip features.

    Every sub-band is spatial-mixed against the low-frequency band as the
    key/value source (high-frequency detail gets adjusted under low-
    frequency guidance), reconstructed, and added residually. The mixes
    carry no internal residual: the module-level ``+ x`` is the only one,
    so zeroing the mix output projection makes this an exact identity.
    """

    def __init__(self, dim, rng, per_band_params=False, qshift_literal=False):
        self.per_band = per_band_params
        if per_band_params:
            self.mixes = [SpatialMix(dim, rng, qshift_literal) for _ in range(4)]
        else:
            self.mix = SpatialMix(dim, rng, qshift_literal)

    def __call__(self, x: TokenGrid, form="scan") -> TokenGrid:
        bands = haar_dwt(x)
        adjusted = []
        for i, band in enumerate(bands):
            mix = self.mixes[i] if self.per_band else self.mix
            adjusted.append(mix(band, recv=band, kv=bands.ll, form=form))
        recon = haar_idwt(SubBands(*adjusted))
        return x.with_tokens(tc.add(recon.tokens, x.tokens))
