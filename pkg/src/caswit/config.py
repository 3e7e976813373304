"""Run configuration: flat ``key = value`` files with CLI overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .model import ModelConfig

MODES = ("tile", "pretrain", "train", "eval", "infer", "attnmap")


class ConfigFileError(ValueError):
    pass


def _parse_int_list(text: str) -> list:
    text = text.strip()
    if text.lower() in ("", "none", "-"):
        return []
    return [int(v) for v in text.replace(" ", "").split(",") if v]


@dataclass
class RunConfig:
    mode: str = "train"
    scale: str = "toy"
    num_classes: int = 4
    fusion_stages: str = "1,2,3,4"
    gated: bool = False
    share_encoders: bool = False
    fpn_channels: int = 64
    ppm_bins: str = "1,2"
    alpha: float = 0.5
    epochs: int = 20
    max_steps: int = 0
    batch: int = 4
    seed: int = 0
    lr: float = 6e-5
    lr_min: float = 1e-6
    weight_decay: float = 0.01
    clip_grad: float = 0.0
    r_hr: float = 0.75
    r_lr: float = 0.5
    lr_mask_rule: str = "exact"
    boundary_radius: int = 2
    biou_absent: str = "skip"
    augment: bool = False
    brightness_jitter: float = 0.0
    manifest: str = ""
    val_manifest: str = ""
    checkpoint: str = ""
    init_mode: str = "intersect"
    out: str = ""
    tile_id: str = ""
    stage: int = 1
    query_x: int = 0
    query_y: int = 0
    log_every: int = 10

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigFileError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha < 0:
            raise ConfigFileError(f"alpha must be >= 0, got {self.alpha}")
        for key in ("r_hr", "r_lr"):
            if not 0 < getattr(self, key) < 1:
                raise ConfigFileError(f"{key} must be in (0, 1), got {getattr(self, key)}")
        if self.batch < 1:
            raise ConfigFileError("batch must be >= 1")
        if self.biou_absent not in ("skip", "zero"):
            raise ConfigFileError("biou_absent must be 'skip' or 'zero'")
        if self.init_mode not in ("strict", "intersect"):
            raise ConfigFileError("init_mode must be 'strict' or 'intersect'")
        try:
            stages = _parse_int_list(self.fusion_stages)
            _parse_int_list(self.ppm_bins)
        except ValueError as exc:
            raise ConfigFileError(f"bad integer list: {exc}") from exc
        if any(s not in (1, 2, 3, 4) for s in stages):
            raise ConfigFileError(f"fusion_stages must be within 1..4, got {self.fusion_stages}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            num_classes=self.num_classes,
            scale=self.scale,
            fusion_stages=set(_parse_int_list(self.fusion_stages)),
            gated=self.gated,
            share_encoders=self.share_encoders,
            fpn_channels=self.fpn_channels,
            ppm_bins=_parse_int_list(self.ppm_bins),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, values: dict) -> "RunConfig":
        merged = self.to_dict()
        merged.update(coerce(values))
        return RunConfig(**merged)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce_value(key: str, raw):
    kind = _FIELDS[key].type
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigFileError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    return raw


def coerce(values: dict) -> dict:
    out = {}
    for key, raw in values.items():
        key = key.replace("-", "_")
        if key not in _FIELDS:
            raise ConfigFileError(f"unknown config key {key!r}")
        out[key] = _coerce_value(key, raw)
    return out


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.replace("-", "_") not in _FIELDS:
            raise ConfigFileError(f"line {lineno}: unknown config key {key!r}")
        values[key] = value
    return coerce(values)


def load_config(path=None, overrides: dict | None = None, mode: str | None = None) -> RunConfig:
    values = parse_config_text(Path(path).read_text(encoding="utf-8")) if path else {}
    if overrides:
        values.update(coerce(overrides))
    if mode is not None:
        values["mode"] = mode
    return RunConfig(**values)
