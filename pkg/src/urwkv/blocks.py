"""VRWKV building blocks: Q-Shift, Spatial Mix, Channel Mix, the residual
block, and the patch-level resolution operators.

All blocks move TokenGrids: batched token sequences that remember their
(h, w) spatial factorization. Token order is row-major over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tc
from .module import Module, const_param, linear_param, zeros_param
from .tensor import ShapeError, Tensor, parameter, record_op
from .wkv import wkv_attention


@dataclass
class TokenGrid:
    """Tokens (B, T, C) with T factored as h * w_."""

    tokens: Tensor
    h: int
    w_: int
    stage: int = 0
    factor: int = 1

    def __post_init__(self):
        b, t, c = self.tokens.shape
        if t != self.h * self.w_:
            raise ShapeError(f"token count {t} != grid {self.h}x{self.w_}")

    @property
    def batch(self):
        return self.tokens.shape[0]

    @property
    def t(self):
        return self.tokens.shape[1]

    @property
    def channels(self):
        return self.tokens.shape[2]

    def with_tokens(self, tokens):
        return replace(self, tokens=tokens)


# ---------------------------------------------------------------------------
# Q-Shift
# ---------------------------------------------------------------------------

def shift4(x, h, w):
    """Quad-directional one-pixel shift on disjoint channel quarters.

    Quarter 0 takes the left neighbor's value, 1 the right's, 2 the one
    above, 3 the one below; borders are zero padded. Linear in x.
    """
    B, T, C = x.shape
    if C % 4 != 0:
        raise ShapeError(f"shift4 needs channels divisible by 4, got {C}")
    q = C // 4
    xb = x.data.reshape(B, h, w, C)
    out = np.zeros_like(xb)
    out[:, :, 1:, 0:q] = xb[:, :, :-1, 0:q]
    out[:, :, :-1, q:2 * q] = xb[:, :, 1:, q:2 * q]
    out[:, 1:, :, 2 * q:3 * q] = xb[:, :-1, :, 2 * q:3 * q]
    out[:, :-1, :, 3 * q:] = xb[:, 1:, :, 3 * q:]

    def bwd(g, needs):
        gb = g.reshape(B, h, w, C)
        dx = np.zeros_like(gb)
        dx[:, :, :-1, 0:q] = gb[:, :, 1:, 0:q]
        dx[:, :, 1:, q:2 * q] = gb[:, :, :-1, q:2 * q]
        dx[:, :-1, :, 2 * q:3 * q] = gb[:, 1:, :, 2 * q:3 * q]
        dx[:, 1:, :, 3 * q:] = gb[:, :-1, :, 3 * q:]
        return (dx.reshape(B, T, C),)

    return record_op("shift4", (x,), out.reshape(B, T, C), bwd)


class QShiftParams(Module):
    """Learnable per-channel fusion vector for one projection role.

    Stored unconstrained; clamped to [0, 1] on read.
    """

    def __init__(self, channels, init=0.5):
        self.mu = const_param((channels,), init)


def q_shift(x: TokenGrid, params: QShiftParams, literal=False) -> TokenGrid:
    """Blend each token with its shifted neighbors.

    Convex form (default): mu*x + (1-mu)*shifted. The literal form
    x + (1-mu)*shifted is kept behind a flag for comparison; it loses the
    identity at mu=1 and inflates magnitude.
    """
    mu = tc.clip01(params.mu)
    shifted = shift4(x.tokens, x.h, x.w_)
    blend = tc.mul(tc.affine(mu, -1.0, 1.0), shifted)
    if literal:
        out = tc.add(x.tokens, blend)
    else:
        out = tc.add(tc.mul(mu, x.tokens), blend)
    return x.with_tokens(out)


# ---------------------------------------------------------------------------
# Spatial Mix / Channel Mix
# ---------------------------------------------------------------------------

class SpatialMix(Module):
    """Token-axis attention: Q-Shift, R/K/V projections, bidirectional WKV,
    sigmoid(R) gate, output projection. No internal residual."""

    def __init__(self, dim, rng, qshift_literal=False):
        self.dim = dim
        self.literal = qshift_literal
        self.mu_r = QShiftParams(dim)
        self.mu_k = QShiftParams(dim)
        self.mu_v = QShiftParams(dim)
        self.w_r = linear_param(rng, dim, dim)
        self.w_k = linear_param(rng, dim, dim)
        self.w_v = linear_param(rng, dim, dim)
        self.w_o = linear_param(rng, dim, dim)
        if dim == 1:
            decay = np.zeros(1)
        else:
            decay = np.linspace(-1.0, 1.0, dim)
        self.decay = parameter(decay)
        self.gain = const_param((dim,), 0.5)

    def __call__(self, x: TokenGrid, recv: TokenGrid | None = None,
                 kv: TokenGrid | None = None, form="scan") -> TokenGrid:
        recv = recv if recv is not None else x
        kv = kv if kv is not None else x
        if (recv.h, recv.w_, recv.channels) != (kv.h, kv.w_, kv.channels):
            raise ShapeError(
                f"receiver grid {recv.h}x{recv.w_}x{recv.channels} does not "
                f"match k/v source {kv.h}x{kv.w_}x{kv.channels}"
            )
        r = tc.matmul(q_shift(recv, self.mu_r, self.literal).tokens, self.w_r)
        k = tc.matmul(q_shift(kv, self.mu_k, self.literal).tokens, self.w_k)
        v = tc.matmul(q_shift(kv, self.mu_v, self.literal).tokens, self.w_v)
        att = wkv_attention(k, v, self.decay, self.gain, form=form)
        out = tc.matmul(tc.mul(tc.sigmoid(r), att), self.w_o)
        return recv.with_tokens(out)


class ChannelMix(Module):
    """Position-wise gated feed-forward with SquaredReLU hidden widening."""

    def __init__(self, dim, rng, hidden_ratio=4, qshift_literal=False):
        self.dim = dim
        self.literal = qshift_literal
        hidden = hidden_ratio * dim
        self.mu_r = QShiftParams(dim)
        self.mu_k = QShiftParams(dim)
        self.w_r = linear_param(rng, dim, dim)
        self.w_k = linear_param(rng, dim, hidden)
        self.w_v = linear_param(rng, hidden, dim)
        self.w_o = linear_param(rng, dim, dim)

    def __call__(self, x: TokenGrid, recv: TokenGrid | None = None,
                 key: TokenGrid | None = None) -> TokenGrid:
        recv = recv if recv is not None else x
        key = key if key is not None else x
        if recv.t != key.t or recv.channels != key.channels:
            raise ShapeError(
                f"receiver tokens {recv.t}x{recv.channels} do not match "
                f"key source {key.t}x{key.channels}"
            )
        r = tc.matmul(q_shift(recv, self.mu_r, self.literal).tokens, self.w_r)
        kk = tc.matmul(q_shift(key, self.mu_k, self.literal).tokens, self.w_k)
        vv = tc.matmul(tc.squared_relu(kk), self.w_v)
        out = tc.matmul(tc.mul(tc.sigmoid(r), vv), self.w_o)
        return recv.with_tokens(out)


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = const_param((dim,), 1.0)
        self.beta = zeros_param((dim,))
        self.eps = eps

    def __call__(self, x):
        return tc.layer_norm(x, self.gamma, self.beta, self.eps)


class VrwkvBlock(Module):
    """Pre-norm residual block: x + SM(LN(x)), then + CM(LN(.))."""

    def __init__(self, dim, rng, hidden_ratio=4, qshift_literal=False):
        self.ln1 = LayerNorm(dim)
        self.att = SpatialMix(dim, rng, qshift_literal)
        self.ln2 = LayerNorm(dim)
        self.ffn = ChannelMix(dim, rng, hidden_ratio, qshift_literal)

    def __call__(self, x: TokenGrid, form="scan") -> TokenGrid:
        y = tc.add(x.tokens, self.att(x.with_tokens(self.ln1(x.tokens)), form=form).tokens)
        z = tc.add(y, self.ffn(x.with_tokens(self.ln2(y))).tokens)
        return x.with_tokens(z)


# ---------------------------------------------------------------------------
# Patch-level resolution operators
# ---------------------------------------------------------------------------

class PatchEmbed(Module):
    """Non-overlapping PxP patches -> linear projection -> + position embedding."""

    def __init__(self, patch, dims, grid_h, grid_w, rng, in_channels=3):
        self.patch = patch
        self.dims = dims
        self.grid_h = grid_h
        self.grid_w = grid_w
        self.proj = linear_param(rng, in_channels * patch * patch, dims)
        self.pos = zeros_param((grid_h * grid_w, dims))

    def __call__(self, image: Tensor) -> TokenGrid:
        B, ch, H, W = image.shape
        P = self.patch
        if H % P != 0 or W % P != 0:
            raise ShapeError(f"image {H}x{W} not divisible by patch size {P}")
        gh, gw = H // P, W // P
        if (gh, gw) != (self.grid_h, self.grid_w):
            raise ShapeError(
                f"image grid {gh}x{gw} does not match embedding grid "
                f"{self.grid_h}x{self.grid_w}"
            )
        x = tc.reshape(image, (B, ch, gh, P, gw, P))
        x = tc.transpose(x, (0, 2, 4, 1, 3, 5))  # B, gh, gw, ch, P, P
        x = tc.reshape(x, (B, gh * gw, ch * P * P))
        tokens = tc.add(tc.matmul(x, self.proj), self.pos)
        return TokenGrid(tokens, gh, gw, stage=0, factor=P)


class PatchMerge(Module):
    """2x2 token neighborhoods concatenated then projected back to dims."""

    def __init__(self, dims, rng):
        self.proj = linear_param(rng, 4 * dims, dims)

    def __call__(self, x: TokenGrid) -> TokenGrid:
        if x.h % 2 or x.w_ % 2:
            raise ShapeError(f"patch_merge needs an even grid, got {x.h}x{x.w_}")
        B, T, C = x.tokens.shape
        h2, w2 = x.h // 2, x.w_ // 2
        t = tc.reshape(x.tokens, (B, h2, 2, w2, 2, C))
        t = tc.transpose(t, (0, 1, 3, 2, 4, 5))  # B, h2, w2, dy, dx, C
        t = tc.reshape(t, (B, h2 * w2, 4 * C))
        out = tc.matmul(t, self.proj)
        return TokenGrid(out, h2, w2, stage=x.stage + 1, factor=x.factor * 2)


class PatchExpand(Module):
    """Linear channel expansion then depth-to-space by ``factor``."""

    def __init__(self, dims, rng, factor=2):
        self.factor = factor
        self.proj = linear_param(rng, dims, factor * factor * dims)

    def __call__(self, x: TokenGrid) -> TokenGrid:
        B, T, C = x.tokens.shape
        f = self.factor
        t = tc.matmul(x.tokens, self.proj)  # (B, T, f*f*C)
        t = tc.reshape(t, (B, x.h, x.w_, f, f, C))
        t = tc.transpose(t, (0, 1, 3, 2, 4, 5))  # B, h, f, w, f, C
        t = tc.reshape(t, (B, x.h * f * x.w_ * f, C))
        return TokenGrid(t, x.h * f, x.w_ * f, stage=x.stage - 1,
                         factor=max(1, x.factor // f))
