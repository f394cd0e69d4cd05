"""Model assembly: encoder/bottleneck/decoder wiring, the two variants,
parameter registry, checkpoint serialization, and the freeze schedule.

The encoder emits four token grids at /4../32 of the input resolution, all
at the configured channel width. The decoder mirrors it with four stages:
the deepest stage fuses the bottleneck output with the /32 skip (no
expansion), the other three each expand 2x before fusing their skip. In the
dagger variant every skip passes through wavelet attention first and the
four decoder outputs are fused by multi-scale channel mixing before the
segmentation head.
"""

from __future__ import annotations

import struct

import numpy as np

from . import tensor as tc
from .blocks import (LayerNorm, PatchEmbed, PatchExpand, PatchMerge,
                     TokenGrid, VrwkvBlock)
from .config import ModelConfig, model_config_echo, parse_model_echo
from .fusion import DecoderPyramid, Mscf, SegHead, SegOutput
from .module import Module, linear_param
from .tensor import ShapeError, Tensor
from .wavelet import Fawa

MAGIC = b"MURW"
VERSION = 1


class CheckpointError(RuntimeError):
    """Malformed checkpoint file or registry mismatch."""


class Stage(Module):
    def __init__(self, dim, depth, rng, hidden_ratio, qshift_literal):
        self.blocks = [
            VrwkvBlock(dim, rng, hidden_ratio, qshift_literal)
            for _ in range(depth)
        ]

    def __call__(self, x, form="scan"):
        for blk in self.blocks:
            x = blk(x, form=form)
        return x


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        g = cfg.image_size // cfg.patch
        self.embed = PatchEmbed(cfg.patch, cfg.dims, g, g, rng)
        self.stages = [
            Stage(cfg.dims, d, rng, cfg.hidden_ratio, cfg.qshift_literal)
            for d in cfg.depths
        ]
        self.merges = [PatchMerge(cfg.dims, rng) for _ in range(3)]

    def __call__(self, image, form="scan"):
        feats = []
        x = self.stages[0](self.embed(image), form=form)
        feats.append(x)
        for merge, stage in zip(self.merges, self.stages[1:]):
            x = stage(merge(x), form=form)
            feats.append(x)
        return feats  # grids /4, /8, /16, /32


class Bottleneck(Module):
    def __init__(self, cfg: ModelConfig, rng):
        self.ln = LayerNorm(cfg.dims)
        self.blocks = [
            VrwkvBlock(cfg.dims, rng, cfg.hidden_ratio, cfg.qshift_literal)
            for _ in range(cfg.bottleneck_depth)
        ]
        self.proj = linear_param(rng, cfg.dims, cfg.dims)

    def __call__(self, x: TokenGrid, form="scan") -> TokenGrid:
        y = x.with_tokens(self.ln(x.tokens))
        for blk in self.blocks:
            y = blk(y, form=form)
        return y.with_tokens(tc.matmul(y.tokens, self.proj))


class DecoderStage(Module):
    """Optional 2x expansion, skip fusion, channel reduce, then blocks."""

    def __init__(self, cfg: ModelConfig, depth, rng, expand):
        self.expand = PatchExpand(cfg.dims, rng, factor=2) if expand else None
        if cfg.skip_mode == "concat":
            self.reduce = linear_param(rng, 2 * cfg.dims, cfg.dims)
        else:
            self.reduce = None
        self.blocks = [
            VrwkvBlock(cfg.dims, rng, cfg.hidden_ratio, cfg.qshift_literal)
            for _ in range(depth)
        ]

    def __call__(self, x: TokenGrid, skip: TokenGrid, form="scan") -> TokenGrid:
        if self.expand is not None:
            x = self.expand(x)
        if (x.h, x.w_) != (skip.h, skip.w_):
            raise ShapeError(
                f"decoder grid {x.h}x{x.w_} does not match skip {skip.h}x{skip.w_}"
            )
        if self.reduce is not None:
            fused = tc.matmul(tc.concat([x.tokens, skip.tokens], axis=-1), self.reduce)
        else:
            fused = tc.add(x.tokens, skip.tokens)
        y = x.with_tokens(fused)
        for blk in self.blocks:
            y = blk(y, form=form)
        return y


class Model(Module):
    def __init__(self, cfg: ModelConfig, rng):
        cfg.validate()
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.bottleneck = Bottleneck(cfg, rng)
        # deepest first: stage 0 has no expansion (bottleneck grid == skip grid)
        self.decoder = [
            DecoderStage(cfg, cfg.decoder_depths[3], rng, expand=False),
            DecoderStage(cfg, cfg.decoder_depths[2], rng, expand=True),
            DecoderStage(cfg, cfg.decoder_depths[1], rng, expand=True),
            DecoderStage(cfg, cfg.decoder_depths[0], rng, expand=True),
        ]
        if cfg.fawa:
            self.fawa_mods = [
                Fawa(cfg.dims, rng, cfg.per_band_params, cfg.qshift_literal)
                for _ in range(4)
            ]
        else:
            self.fawa_mods = None
        if cfg.mscf:
            self.mscf = Mscf(cfg.dims, rng, cfg.upsample_mode,
                             cfg.hidden_ratio, cfg.qshift_literal,
                             cfg.per_branch_params)
            head_in = 4 * cfg.dims
        else:
            self.mscf = None
            head_in = cfg.dims
        self.head = SegHead(cfg.dims, cfg.classes, cfg.patch, rng,
                            in_channels=head_in)

    def forward(self, image, form="scan") -> SegOutput:
        if not isinstance(image, Tensor):
            image = tc.tensor(image)
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"expected image batch (B, 3, H, W), got {image.shape}")
        H, W = image.shape[2], image.shape[3]
        if H % 32 or W % 32:
            raise ShapeError(
                f"input size {H}x{W} must be a multiple of 32 in each dimension"
            )
        if H != self.cfg.image_size or W != self.cfg.image_size:
            raise ShapeError(
                f"input size {H}x{W} does not match configured image_size "
                f"{self.cfg.image_size}"
            )
        feats = self.encoder(image, form=form)
        skips = list(feats)
        if self.fawa_mods is not None:
            skips = [fw(f, form=form) for fw, f in zip(self.fawa_mods, skips)]
        deep = self.bottleneck(feats[3], form=form)
        f4 = self.decoder[0](deep, skips[3], form=form)
        f3 = self.decoder[1](f4, skips[2], form=form)
        f2 = self.decoder[2](f3, skips[1], form=form)
        f1 = self.decoder[3](f2, skips[0], form=form)
        if self.mscf is not None:
            fused = self.mscf(DecoderPyramid(f1, f2, f3, f4))
        else:
            fused = f1
        return self.head(fused)

    def __call__(self, image, form="scan"):
        return self.forward(image, form=form)

    def encoder_param_names(self):
        return {name for name, _ in self.encoder.named_params("encoder.")}


def build_model(cfg: ModelConfig, seed=0) -> Model:
    return Model(cfg, np.random.default_rng(seed))


def freeze_schedule(model: Model, epoch, freeze_epochs=10):
    """Names of parameters excluded from updates at this epoch."""
    if epoch < freeze_epochs:
        return model.encoder_param_names()
    return set()


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path, step=0):
    """magic `MURW`, u32 version, length-prefixed config echo (which carries
    the step counter), then the tensor table with little-endian f32 payloads."""
    echo = model_config_echo(model.cfg) + f"step = {int(step)}\n"
    cfg_bytes = echo.encode("utf-8")
    params = model.param_dict()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(cfg_bytes)))
        fh.write(cfg_bytes)
        fh.write(struct.pack("<I", len(params)))
        for name, p in params.items():
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", p.data.ndim))
            fh.write(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def _read_exact(fh, n, what):
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return buf


def read_checkpoint(path):
    """Parse a checkpoint file into (ModelConfig, step, name -> array dict)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        echo = _read_exact(fh, cfg_len, "config block").decode("utf-8")
        cfg, extras = parse_model_echo(echo)
        step = int(extras.get("step", "0"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "tensor name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "tensor rank"))
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, "tensor dims"))
            n_items = 1
            for d in dims:
                n_items *= d
            raw = _read_exact(fh, 4 * n_items, f"payload of {name}")
            tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after tensor table")
    return cfg, step, tensors


def load_checkpoint(path, expect_cfg: ModelConfig | None = None):
    """Rebuild a model from a checkpoint; returns (model, step)."""
    cfg, step, tensors = read_checkpoint(path)
    if expect_cfg is not None and expect_cfg != cfg:
        raise CheckpointError(
            "checkpoint config does not match the requested config"
        )
    model = build_model(cfg, seed=0)
    params = model.param_dict()
    unknown = set(tensors) - set(params)
    if unknown:
        raise CheckpointError(f"unknown tensor names in checkpoint: {sorted(unknown)[:5]}")
    missing = set(params) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {sorted(missing)[:5]}")
    for name, arr in tensors.items():
        p = params[name]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"tensor {name} has shape {arr.shape}, model expects {p.data.shape}"
            )
        p.data = arr
    return model, step
