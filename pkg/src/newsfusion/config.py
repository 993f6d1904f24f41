"""Run configuration: one nested structure holding every stage's settings.

Values resolve in three layers: preset defaults, then a JSON/YAML file,
then command-line overrides. Unknown keys are rejected at every level.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

import yaml

from .dataset import SignalSpec
from .fusion import FusionConfig
from .pipeline import StrategySettings, desk_backbone, desk_optimizer
from .tabular import DEFAULT_ENSEMBLE_BASES
from .textenc import BackboneConfig, HeadConfig, parse_blocks
from .training import OptimizerConfig, SmoothingLossConfig

OUT_ENV = "NEWSFUSION_OUT"


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    out: Optional[str] = None  # falls back to $NEWSFUSION_OUT, then ./runs
    corpus: Optional[str] = None
    text_checkpoint: Optional[str] = None
    meta_checkpoint: Optional[str] = None
    images: Optional[str] = None  # image root for Pillow; unset reads WxH from file names


@dataclass
class SynthSection:
    n: int = 2000
    signal: SignalSpec = field(default_factory=SignalSpec)


@dataclass
class SplitSection:
    folds: int = 5
    holdout_fold: int = 0
    stratified: bool = True


@dataclass
class TabularSection:
    model: str = "gradient_boosting"
    hyperparameters: dict = field(default_factory=dict)


@dataclass
class EnsembleSection:
    mode: str = "stacking"
    base: list = field(default_factory=lambda: list(DEFAULT_ENSEMBLE_BASES))
    stacking_folds: int = 5
    blending_holdout_fraction: float = 0.2


@dataclass
class TextSection:
    backbone: BackboneConfig = field(default_factory=desk_backbone)
    blocks: str = "1-4"
    head: HeadConfig = field(default_factory=HeadConfig)
    optimizer: OptimizerConfig = field(default_factory=desk_optimizer)
    validation_fraction: float = 0.1


@dataclass
class FusionSection:
    strategy: str = "S4"
    model: FusionConfig = field(default_factory=FusionConfig)
    optimizer: OptimizerConfig = field(default_factory=desk_optimizer)
    meta_optimizer: OptimizerConfig = field(default_factory=lambda: desk_optimizer(epochs=30, max_lr=1e-3))


@dataclass
class CVSection:
    folds: int = 10
    model: str = "gradient_boosting"


@dataclass
class RunConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    synth: SynthSection = field(default_factory=SynthSection)
    split: SplitSection = field(default_factory=SplitSection)
    tabular: TabularSection = field(default_factory=TabularSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    text: TextSection = field(default_factory=TextSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    loss: SmoothingLossConfig = field(default_factory=SmoothingLossConfig)
    cv: CVSection = field(default_factory=CVSection)

    @property
    def out_root(self) -> str:
        return self.paths.out or os.environ.get(OUT_ENV) or "runs"

    def to_dict(self) -> dict:
        return asdict(self)

    def strategy_settings(self) -> StrategySettings:
        return StrategySettings(
            backbone=self.text.backbone,
            blocks=parse_blocks(self.text.blocks),
            head=self.text.head,
            fusion=self.fusion.model,
            text_optimizer=self.text.optimizer,
            meta_optimizer=self.fusion.meta_optimizer,
            fusion_optimizer=self.fusion.optimizer,
            loss=self.loss,
            validation_fraction=self.text.validation_fraction,
            seed=self.seed,
        )


def full_preset() -> RunConfig:
    """Full-size settings: 12-block pretrained encoder and the reported optimizer constants."""
    cfg = RunConfig()
    cfg.text.backbone = BackboneConfig.pretrained()
    cfg.text.blocks = "1-12"
    cfg.text.optimizer = OptimizerConfig()
    cfg.fusion.optimizer = OptimizerConfig()
    return cfg


PRESETS = {"desk": RunConfig, "full": full_preset}


# ---------------------------------------------------------------------------
# merging


def _coerce(current: Any, value: Any, where: str) -> Any:
    if dataclasses.is_dataclass(current):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping, got {type(value).__name__}")
        return merge(current, value, where)
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool) and isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def merge(obj, updates: dict, where: str = ""):
    """Return a copy of dataclass ``obj`` with ``updates`` applied recursively."""
    names = {f.name for f in dataclasses.fields(obj)}
    unknown = sorted(set(updates) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in unknown)}")
    changes = {}
    for key, value in updates.items():
        path = f"{where}.{key}" if where else key
        changes[key] = _coerce(getattr(obj, key), value, path)
    try:
        return dataclasses.replace(obj, **changes)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def read_config_file(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh) if path.endswith(".json") else yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def dotted(key: str, value: Any) -> dict:
    """``("text.optimizer.epochs", 3)`` -> ``{"text": {"optimizer": {"epochs": 3}}}``."""
    out: dict = {}
    node = out
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value
    return out


def parse_assignment(text: str) -> dict:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    return dotted(key.strip(), yaml.safe_load(raw))


def resolve(preset: str = "desk", path: Optional[str] = None, overrides: tuple = ()) -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[preset]()
    if path:
        cfg = merge(cfg, read_config_file(path))
    for upd in overrides:
        cfg = merge(cfg, upd)
    return cfg


def write_config(cfg: RunConfig, directory: str, extra: Optional[dict] = None) -> str:
    """Write ``config.json`` (re-loadable with ``--config``) and ``run.json``."""
    os.makedirs(directory, exist_ok=True)
    path = os.path.join(directory, "config.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
    with open(os.path.join(directory, "run.json"), "w", encoding="utf-8") as fh:
        json.dump({"seed": cfg.seed, **(extra or {})}, fh, indent=2, sort_keys=True, default=str)
    return path
