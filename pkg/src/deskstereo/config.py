"""Flat key=value configuration shared by the model, training, evaluation and CLI."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError


def _opt(default, doc: str):
    return field(default=default, metadata={"doc": doc})


@dataclass
class Config:
    # model
    groups: int = _opt(8, "channel groups of the group-wise correlation")
    levels: int = _opt(2, "pyramid levels for both lookup volumes")
    radius: int = _opt(4, "lookup radius r (2r+1 taps per level)")
    max_disp: int = _opt(64, "full-resolution disparity range of the geometry volume (multiple of 4)")
    hidden_channels: int = _opt(64, "hidden-state channels C_h at every level")
    prompt_channels: int = _opt(64, "prompt channels C_p")
    zero_init_prompt_conv: bool = _opt(False, "zero-initialize the last conv of each prompt block")
    merged_hidden_prompt_conv: bool = _opt(False, "inject prompts through one conv over [hidden, P_S, P_M]")
    prompt_injection: bool = _opt(True, "add prompts to the level-0 candidate (False = prompt-free model)")
    upsample_mode: str = _opt("convex", "final upsampling of iterates: convex | bilinear")
    detach_iterates: bool = _opt(True, "stop gradients through d_k between iterations")
    model_seed: int = _opt(0, "seed for trainable weight initialization")
    mono_seed: int = _opt(1234, "seed of the frozen mono branch")
    mono_mode: str = _opt("network", "relative depth source: network | oracle")
    oracle_noise: float = _opt(0.1, "noise std of the oracle relative depth")
    # training
    lr_max: float = _opt(2e-4, "peak learning rate of the one-cycle schedule")
    steps: int = _opt(600, "optimizer steps")
    batch: int = _opt(2, "samples per step")
    gamma: float = _opt(0.9, "iterate loss decay")
    iterations_train: int = _opt(8, "refinement iterations during training")
    iterations_eval: int = _opt(32, "refinement iterations during inference")
    warm_start_max: int = _opt(0, "run up to N ungraded iterations before the graded ones (0 disables)")
    warm_start_prob: float = _opt(1.0, "fraction of steps that use a warm start")
    seed: int = _opt(0, "data and batching seed")
    weight_decay: float = _opt(1e-5, "AdamW decoupled weight decay")
    beta1: float = _opt(0.9, "AdamW first-moment decay")
    beta2: float = _opt(0.999, "AdamW second-moment decay")
    adam_eps: float = _opt(1e-8, "AdamW epsilon")
    grad_clip: float = _opt(1.0, "global gradient-norm clip (0 disables)")
    train_samples: int = _opt(0, "fixed training pool size (0 = fresh samples every step)")
    log_every: int = _opt(0, "print progress every N steps (0 = silent)")
    # data
    crop_h: int = _opt(64, "image height")
    crop_w: int = _opt(128, "image width")
    num_layers: int = _opt(2, "foreground planes per synthetic scene")
    data_max_disp: float = _opt(24.0, "maximum disparity of synthetic scenes")
    texture_sigma: float = _opt(1.0, "blur of the random-dot texture, pixels")
    # evaluation
    taus: str = _opt("1.0,2.0,3.0", "comma-separated Bad-tau thresholds")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.iterations_train < 1 or self.iterations_eval < 1:
            raise ConfigError("iteration counts must be >= 1")
        if not 1 <= self.data_max_disp < self.crop_w / 2:
            raise ConfigError(f"data_max_disp must lie in [1, crop_w/2), got {self.data_max_disp} for crop_w {self.crop_w}")
        if self.warm_start_max < 0:
            raise ConfigError(f"warm_start_max must be >= 0, got {self.warm_start_max}")
        if not 0 <= self.warm_start_prob <= 1:
            raise ConfigError(f"warm_start_prob must lie in [0, 1], got {self.warm_start_prob}")
        if self.mono_mode not in ("network", "oracle"):
            raise ConfigError(f"mono_mode must be 'network' or 'oracle', got {self.mono_mode!r}")
        if self.upsample_mode not in ("convex", "bilinear"):
            raise ConfigError(f"upsample_mode must be 'convex' or 'bilinear', got {self.upsample_mode!r}")
        if self.max_disp % 4 or self.max_disp < 8:
            raise ConfigError(f"max_disp must be a multiple of 4 and >= 8, got {self.max_disp}")
        if self.crop_h % 32 or self.crop_w % 32:
            raise ConfigError(f"crop size must be a multiple of 32, got {self.crop_h}x{self.crop_w}")
        self.tau_list()

    def tau_list(self) -> list[float]:
        try:
            taus = [float(t) for t in self.taus.split(",") if t.strip()]
        except ValueError as exc:
            raise ConfigError(f"taus must be comma-separated numbers, got {self.taus!r}") from exc
        if not taus or any(t <= 0 for t in taus):
            raise ConfigError(f"taus must be positive, got {self.taus!r}")
        return taus

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, values: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**values)


def _parse_value(name: str, raw: str, typ: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {name}: cannot parse {raw!r} as {typ}") from None
    return raw


def parse_assignments(lines, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys raise ConfigError."""
    types = {f.name: f.type for f in fields(Config)}
    out = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {line.strip()!r}")
        key, value = (s.strip() for s in text.split("=", 1))
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = _parse_value(key, value, types[key])
    return out


def load_config(path: str | os.PathLike | None = None, overrides=()) -> Config:
    """Read a config file (optional) and apply ``key=value`` overrides on top."""
    values = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                values.update(parse_assignments(fh, str(path)))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
    values.update(parse_assignments(overrides, "<override>"))
    return Config.from_dict(values)


def describe() -> str:
    """One line per key: name, default, description."""
    return "\n".join(f"{f.name} = {f.default}  # {f.metadata['doc']}" for f in fields(Config))
