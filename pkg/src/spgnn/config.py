"""Run configuration: nested dataclasses loaded strictly from JSON."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .msgcn import MsgcnConfig
from .sprpn import FUSION_MODES
from .superpixel import DEFAULT_COMPACTNESS, DEFAULT_ITERS, DEFAULT_M_TARGET


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    stage_depths: list = field(default_factory=lambda: [2, 2, 6, 2])
    stage_dims: list = field(default_factory=lambda: [80, 160, 400, 640])
    k: int = 9
    heads: int = 4
    width_scale: float = 1.0
    neck_dim: int = 256
    ffn_ratio: int = 4
    num_classes: int = 5
    head_hidden: int = 1024
    spgcn_hidden: int = 64

    def msgcn(self) -> MsgcnConfig:
        return MsgcnConfig(list(self.stage_depths), list(self.stage_dims), self.k, self.heads,
                           self.width_scale, self.neck_dim, self.ffn_ratio)

    @property
    def head_width(self) -> int:
        return max(1, int(round(self.head_hidden * self.width_scale)))


@dataclass
class SuperpixelConfig:
    enabled: bool = True
    m_target: int = DEFAULT_M_TARGET
    compactness: float = DEFAULT_COMPACTNESS
    iters: int = DEFAULT_ITERS


@dataclass
class FusionConfig:
    mode: str = "concat"


@dataclass
class RpnConfig:
    nms_iou: float = 0.7
    pre_nms_top: int = 1000
    post_nms_top: int = 300
    min_size: float = 2.0
    pos_iou: float = 0.7
    neg_iou: float = 0.3
    num_samples: int = 256
    pos_fraction: float = 0.5


@dataclass
class HeadConfig:
    pos_iou: float = 0.5
    neg_iou: float = 0.5
    num_samples: int = 128
    pos_fraction: float = 0.5
    score_thr: float = 0.05
    nms_iou: float = 0.5
    max_dets: int = 100


@dataclass
class OptimizerConfig:
    lr: float | None = None     # None: 0.02 / 16 per image, times the batch size
    momentum: float = 0.9
    weight_decay: float = 1e-4


@dataclass
class ScheduleConfig:
    epochs: int = 12
    batch_size: int = 2
    max_steps: int | None = None     # when set, the run length in steps (epochs is ignored)
    hflip: bool = False


@dataclass
class PathsConfig:
    data: str = "data"
    out: str = "runs/default"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    superpixel: SuperpixelConfig = field(default_factory=SuperpixelConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    rpn: RpnConfig = field(default_factory=RpnConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)

    @property
    def lr(self) -> float:
        if self.optimizer.lr is not None:
            return self.optimizer.lr
        return 0.02 / 16 * self.schedule.batch_size

    def validate(self) -> "RunConfig":
        m = self.model
        try:
            m.msgcn()
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from None
        if self.fusion.mode not in FUSION_MODES:
            raise ConfigError(f"fusion.mode: expected one of {FUSION_MODES}, got {self.fusion.mode!r}")
        if m.num_classes < 1:
            raise ConfigError("model.num_classes must be >= 1")
        for name, sec in (("rpn", self.rpn), ("head", self.head)):
            if not 0 < sec.neg_iou <= sec.pos_iou <= 1:
                raise ConfigError(f"{name}: need 0 < neg_iou <= pos_iou <= 1")
        if self.schedule.epochs < 1 or self.schedule.batch_size < 1:
            raise ConfigError("schedule.epochs and schedule.batch_size must be >= 1")
        if self.schedule.max_steps is not None and self.schedule.max_steps < 1:
            raise ConfigError("schedule.max_steps must be >= 1")
        if self.lr <= 0:
            raise ConfigError("optimizer.lr must be positive")
        if self.superpixel.m_target < 4:
            raise ConfigError("superpixel.m_target must be >= 4")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown config key '{where}'")
        default = getattr(cls(), key)
        if dataclasses.is_dataclass(default):
            if cls is RunConfig and key == "fusion" and isinstance(val, str):
                val = {"mode": val}
            kwargs[key] = _build(type(default), val, where)
        else:
            kwargs[key] = _coerce(val, default, where)
    return cls(**kwargs)


def _coerce(val, default, where: str):
    if default is None or val is None:
        return val
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"{where}: expected a boolean")
        return val
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(f"{where}: expected an integer")
        return val
    if isinstance(default, float):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"{where}: expected a number")
        return float(val)
    if isinstance(default, str):
        if not isinstance(val, str):
            raise ConfigError(f"{where}: expected a string")
        return val
    if isinstance(default, list):
        if not isinstance(val, list):
            raise ConfigError(f"{where}: expected a list")
        return list(val)
    return val


def config_from_dict(data: dict) -> RunConfig:
    cfg = _build(RunConfig, data, "")
    if "SPGNN_SEED" in os.environ:
        cfg.seed = int(os.environ["SPGNN_SEED"])
    return cfg.validate()


def config_load(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


def desk_config(**overrides) -> RunConfig:
    """The small CPU profile: depths 1,1,2,1, width 1/8, two heads, 224 px inputs.

    Defects at 224 px are 15 to 50 px across, and most of them overlap no
    anchor at IoU 0.7, so RPN positives start at 0.5 here.
    """
    cfg = RunConfig()
    cfg.model.stage_depths = [1, 1, 2, 1]
    cfg.model.width_scale = 1 / 8
    cfg.model.heads = 2
    cfg.rpn.pos_iou = 0.5
    for key, val in overrides.items():
        section, _, name = key.partition("__")
        if name:
            setattr(getattr(cfg, section), name, val)
        else:
            setattr(cfg, key, val)
    return cfg.validate()
