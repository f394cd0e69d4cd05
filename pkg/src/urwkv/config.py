"""Model/run configuration and the line-oriented ``key = value`` file format.

Every run echoes its fully resolved configuration into the output directory
so results stay reproducible from the artifacts alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace


class ConfigError(ValueError):
    """Invalid configuration; message enumerates every offending field."""


@dataclass
class ModelConfig:
    variant: str = "base"  # base | dagger
    dims: int = 32
    depths: tuple = (2, 2, 2, 2)
    decoder_depths: tuple = (2, 2, 2, 2)
    bottleneck_depth: int = 1
    patch: int = 4
    hidden_ratio: int = 4
    classes: int = 2
    image_size: int = 64
    fawa: bool = False
    mscf: bool = False
    qshift_literal: bool = False
    per_band_params: bool = False
    per_branch_params: bool = False
    skip_mode: str = "concat"  # concat | add
    upsample_mode: str = "bilinear"  # bilinear | nearest

    def validate(self):
        problems = []
        if self.variant not in ("base", "dagger"):
            problems.append(f"variant must be base|dagger, got {self.variant!r}")
        if self.variant == "base" and (self.fawa or self.mscf):
            problems.append("variant=base cannot enable fawa/mscf")
        if self.variant == "dagger" and not (self.fawa or self.mscf):
            problems.append("variant=dagger needs fawa and/or mscf enabled")
        if self.dims < 4 or self.dims % 4 != 0:
            problems.append(f"dims must be a positive multiple of 4, got {self.dims}")
        for name in ("depths", "decoder_depths"):
            val = getattr(self, name)
            if len(val) != 4 or any(d < 1 for d in val):
                problems.append(f"{name} must be 4 counts >= 1, got {val}")
        if self.bottleneck_depth < 1:
            problems.append(f"bottleneck_depth must be >= 1, got {self.bottleneck_depth}")
        if self.patch != 4:
            problems.append(f"patch size is fixed at 4, got {self.patch}")
        if self.hidden_ratio < 1:
            problems.append(f"hidden_ratio must be >= 1, got {self.hidden_ratio}")
        if self.classes < 2:
            problems.append(f"classes must be >= 2, got {self.classes}")
        if self.image_size < 32 or self.image_size % 32 != 0:
            problems.append(f"image_size must be a positive multiple of 32, got {self.image_size}")
        elif self.fawa and self.image_size % 64 != 0:
            # /32-stage grid must stay even for the wavelet analysis
            problems.append(
                f"image_size must be a multiple of 64 when fawa is enabled, got {self.image_size}"
            )
        if self.skip_mode not in ("concat", "add"):
            problems.append(f"skip_mode must be concat|add, got {self.skip_mode!r}")
        if self.upsample_mode not in ("bilinear", "nearest"):
            problems.append(f"upsample_mode must be bilinear|nearest, got {self.upsample_mode!r}")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))
        return self


@dataclass
class TrainConfig:
    lr: float = 3e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 50
    batch_size: int = 8
    patience: int = 10
    seed: int = 0
    freeze_epochs: int = 0
    ce_weight: float = 0.5
    dice_weight: float = 0.5
    kernel_form: str = "scan"  # scan | naive

    def validate(self):
        problems = []
        if self.lr <= 0:
            problems.append(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            problems.append(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            problems.append(f"betas must be in (0, 1), got ({self.beta1}, {self.beta2})")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            problems.append(f"patience must be >= 1, got {self.patience}")
        if self.freeze_epochs < 0:
            problems.append(f"freeze_epochs must be >= 0, got {self.freeze_epochs}")
        if self.ce_weight < 0 or self.dice_weight < 0:
            problems.append("loss weights must be >= 0")
        if self.kernel_form not in ("scan", "naive"):
            problems.append(f"kernel_form must be scan|naive, got {self.kernel_form!r}")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))
        return self


PRESETS = {
    # CI-speed acceptance scale
    "micro": dict(dims=32, depths=(2, 2, 2, 2), decoder_depths=(2, 2, 2, 2)),
    # approximates the tiny model scale; for parameter counting only
    "tiny": dict(dims=192, depths=(2, 2, 6, 2), decoder_depths=(2, 2, 2, 2)),
}

_BOOL_KEYS = {"fawa", "mscf", "qshift_literal", "per_band_params", "per_branch_params"}
_TUPLE_KEYS = {"depths", "decoder_depths"}


def _parse_value(key, raw, target_type):
    raw = raw.strip()
    if key in _TUPLE_KEYS:
        try:
            return tuple(int(p.strip()) for p in raw.split(","))
        except ValueError:
            raise ConfigError(f"{key} must be comma-separated integers, got {raw!r}")
    if target_type is bool or key in _BOOL_KEYS:
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key} must be a boolean, got {raw!r}")
    if target_type is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {raw!r}")
    if target_type is float:
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {raw!r}")
    return raw


def parse_config_text(text, overrides=()):
    """Parse key = value lines (# comments) into (ModelConfig, TrainConfig)."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = stripped.partition("=")
        pairs[key.strip()] = raw.strip()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, _, raw = item.partition("=")
        pairs[key.strip()] = raw.strip()

    preset = pairs.pop("preset", None)
    model_kwargs = dict(PRESETS.get(preset, {})) if preset else {}
    if preset and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; known: {sorted(PRESETS)}")

    model_fields = {f.name: f.type for f in fields(ModelConfig)}
    train_fields = {f.name: f.type for f in fields(TrainConfig)}
    train_kwargs = {}
    unknown = []
    for key, raw in pairs.items():
        if key in model_fields:
            ftype = type(getattr(ModelConfig(), key))
            model_kwargs[key] = _parse_value(key, raw, ftype)
        elif key in train_fields:
            ftype = type(getattr(TrainConfig(), key))
            train_kwargs[key] = _parse_value(key, raw, ftype)
        else:
            unknown.append(key)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    model = replace(ModelConfig(), **model_kwargs)
    # dagger implies both additions unless explicitly set
    if model.variant == "dagger" and "fawa" not in pairs and "mscf" not in pairs \
            and not model.fawa and not model.mscf:
        model = replace(model, fawa=True, mscf=True)
    train = replace(TrainConfig(), **train_kwargs)
    model.validate()
    train.validate()
    return model, train


def load_config(path, overrides=()):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), overrides)


def config_echo(model: ModelConfig, train: TrainConfig, extra=()):
    """Serialize every resolved value back to the file format."""
    lines = []
    for cfg in (model, train):
        for f in fields(cfg):
            val = getattr(cfg, f.name)
            if isinstance(val, tuple):
                val = ",".join(str(x) for x in val)
            lines.append(f"{f.name} = {val}")
    for key, val in extra:
        lines.append(f"{key} = {val}")
    return "\n".join(lines) + "\n"


def model_config_echo(model: ModelConfig):
    lines = []
    for f in fields(model):
        val = getattr(model, f.name)
        if isinstance(val, tuple):
            val = ",".join(str(x) for x in val)
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def parse_model_echo(text):
    """Rebuild a ModelConfig from its echo (used by checkpoint loading)."""
    kwargs = {}
    extras = {}
    model_fields = {f.name for f in fields(ModelConfig)}
    for line in text.splitlines():
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key in model_fields:
            ftype = type(getattr(ModelConfig(), key))
            kwargs[key] = _parse_value(key, raw, ftype)
        else:
            extras[key] = raw.strip()
    return replace(ModelConfig(), **kwargs).validate(), extras
