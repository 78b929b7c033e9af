"""Run configuration: defaults, key=value file parsing, validation.

Config files are plain text, one `key = value` per line, `#` starts a
comment. Keys match the field names below; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .errors import UsageError

VALID_MODALITIES = ("v", "a", "t")


@dataclass
class Config:
    # corpus generation
    seed: int = 0
    n_samples: int = 64
    frames: int = 50                 # timesteps per sample (10 s at 5 fps)
    dim_v: int = 32
    dim_a: int = 48
    dim_s: int = 16
    noise_v: float = 0.05
    noise_a: float = 0.05
    noise_s: float = 0.05
    frame_rate_hz: float = 5.0

    # contrastive alignment (stage 1)
    embed_dim: int = 32
    encoder_hidden: int = 64
    text_vocab: int = 512
    tau: float = 0.07
    symmetric_contrast: bool = False
    stage1_epochs: int = 200
    stage1_eta_max: float = 0.3
    stage1_eta_min: float = 0.02
    stage1_clip: float = 1.0

    # fusion architecture (stage 2)
    tcn_channels: int = 32
    tcn_layers: int = 4
    tcn_kernel: int = 3
    lstm_hidden: int = 32
    d_shared: int = 32
    map_hidden: int = 32
    quality_hidden: int = 16
    segments: int = 10               # M equal-length pooling segments
    transformer_layers: int = 2
    transformer_heads: int = 4
    transformer_ff: int = 64
    fusion_mode: str = "sum"         # sum | concat
    use_tfe: bool = True
    use_qam: bool = True
    modalities: str = "v+a+t"

    # stage-2 training
    eta_max: float = 0.5
    eta_min: float = 0.005
    cycle_epochs: int = 10           # cosine restart cycle length, in epochs
    momentum: float = 0.9
    ema_gamma: float = 0.99
    clip_norm: float = 5.0
    batch_size: int = 8
    epochs: int = 200
    val_fraction: float = 0.25
    occlusion_augment: float = 0.0   # per-sample probability of visual occlusion

    def modality_set(self):
        mods = tuple(m for m in VALID_MODALITIES if m in self.modalities.lower())
        if not mods:
            raise UsageError(f"no valid modalities in {self.modalities!r}")
        return mods

    def validate(self):
        if self.fusion_mode not in ("sum", "concat"):
            raise UsageError(f"fusion_mode must be sum or concat, got {self.fusion_mode!r}")
        if self.tau <= 0:
            raise UsageError("tau must be positive")
        if not 0 <= self.val_fraction < 1:
            raise UsageError("val_fraction must lie in [0, 1)")
        if self.cycle_epochs < 1:
            raise UsageError("cycle_epochs must be at least 1")
        if not 0 <= self.ema_gamma < 1:
            raise UsageError("ema_gamma must lie in [0, 1)")
        if self.transformer_heads < 1:
            raise UsageError("transformer_heads must be at least 1")
        self.modality_set()  # head divisibility is checked at model build
        return self

    def to_dict(self):
        return dataclasses.asdict(self)


def _parse_value(field, raw):
    raw = raw.strip()
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    if field.type in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return raw


def load_config(path=None, overrides=None):
    """Build a Config from defaults, an optional file, and explicit overrides."""
    cfg = Config()
    fields = {f.name: f for f in dataclasses.fields(Config)}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in fields:
                    raise UsageError(f"{path}:{line_no}: unknown config key {key!r}")
                try:
                    setattr(cfg, key, _parse_value(fields[key], raw))
                except ValueError as exc:
                    raise UsageError(f"{path}:{line_no}: bad value for {key}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if key not in fields:
            raise UsageError(f"unknown config key {key!r}")
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()


def config_from_dict(data):
    fields = {f.name for f in dataclasses.fields(Config)}
    cfg = Config(**{k: v for k, v in data.items() if k in fields})
    return cfg.validate()
