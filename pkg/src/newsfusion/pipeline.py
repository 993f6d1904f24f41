"""Ready-made pipelines for :func:`newsfusion.training.cross_validate` and the
strategy comparison runner."""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import torch
from sklearn.model_selection import train_test_split

from .features import FoldData
from .fusion import FusionConfig, StrategyPlan, assemble, save_checkpoint
from .tabular import BaseLearnerSpec, EnsembleConfig, MetaMLP, train_base, train_blending, train_stacking
from .textenc import BackboneConfig, HeadConfig, TextClassifier, build_backbone, predict_proba
from .training import OptimizerConfig, SmoothingLossConfig, train


class ConstantPipeline:
    def fit_predict(self, fold: FoldData) -> np.ndarray:
        return np.full(len(fold.test), 0.5)


class LabelOraclePipeline:
    """Scores each held-out row with its own label (an upper bound)."""

    def fit_predict(self, fold: FoldData) -> np.ndarray:
        return fold.y_test.astype(np.float64)


class TabularPipeline:
    def __init__(self, model: str = "gradient_boosting", seed: int = 0, hyperparameters: Optional[dict] = None):
        self.model = model
        self.seed = seed
        self.hyperparameters = hyperparameters or {}

    def fit(self, X, y):
        if self.model in ("stack", "stacking"):
            return train_stacking(EnsembleConfig(mode="stacking", seed=self.seed), X, y)
        if self.model in ("blend", "blending"):
            return train_blending(EnsembleConfig(mode="blending", seed=self.seed), X, y)
        return train_base(BaseLearnerSpec(self.model, self.hyperparameters, self.seed), X, y)

    def fit_predict(self, fold: FoldData) -> np.ndarray:
        fitted = self.fit(fold.meta_train.values, fold.y_train)
        return fitted.predict_proba(fold.meta_test.values)


# ---------------------------------------------------------------------------
# gradient-trained submodels


def desk_backbone(seed: int = 0) -> BackboneConfig:
    """Toy backbone sized for CPU-only runs."""
    return BackboneConfig(kind="toy", n_blocks=4, hidden=32, max_sequence_length=64, n_heads=2, ffn=64, seed=seed)


def desk_optimizer(seed: int = 0, epochs: int = 8, max_lr: float = 5e-3) -> OptimizerConfig:
    """Learning rates for training the randomly initialized toy stack."""
    return OptimizerConfig(base_lr=max_lr / 2, max_lr=max_lr, epochs=epochs, seed=seed)


@dataclass
class StrategySettings:
    backbone: BackboneConfig = field(default_factory=desk_backbone)
    blocks: tuple = (1, 2, 3, 4)
    head: HeadConfig = field(default_factory=HeadConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    text_optimizer: OptimizerConfig = field(default_factory=desk_optimizer)
    meta_optimizer: OptimizerConfig = field(default_factory=lambda: desk_optimizer(epochs=30, max_lr=1e-3))
    fusion_optimizer: OptimizerConfig = field(default_factory=desk_optimizer)
    loss: SmoothingLossConfig = field(default_factory=SmoothingLossConfig)
    validation_fraction: float = 0.1
    seed: int = 0


def _inner_split(y, fraction: float, seed: int):
    idx = np.arange(len(y))
    return train_test_split(idx, test_size=fraction, stratify=y, random_state=seed)


def _meta_tensor(values) -> torch.Tensor:
    return torch.as_tensor(np.asarray(values), dtype=torch.float32)


def _subset(inputs: dict, idx) -> dict:
    idx = torch.as_tensor(idx)
    return {k: v[idx] for k, v in inputs.items()}


def fit_meta_submodel(fold: FoldData, s: StrategySettings):
    torch.manual_seed(s.seed)
    model = MetaMLP(fold.meta_train.values.shape[1], s.fusion.meta_hidden, s.fusion.meta_dropout)
    tr, va = _inner_split(fold.y_train, s.validation_fraction, s.seed)
    X = _meta_tensor(fold.meta_train.values)
    opt = replace(s.meta_optimizer, seed=s.seed)
    model, hist = train(model, {"meta": X[tr]}, fold.y_train[tr], opt, s.loss, val=({"meta": X[va]}, fold.y_train[va]))
    return model, hist


def fit_text_submodel(fold: FoldData, s: StrategySettings):
    torch.manual_seed(s.seed)
    model = TextClassifier(build_backbone(s.backbone), s.blocks, s.head)
    inputs = model.make_inputs(fold.texts_train)
    tr, va = _inner_split(fold.y_train, s.validation_fraction, s.seed)
    opt = replace(s.text_optimizer, seed=s.seed)
    model, hist = train(
        model, _subset(inputs, tr), fold.y_train[tr], opt, s.loss, val=(_subset(inputs, va), fold.y_train[va])
    )
    return model, hist


def fit_fusion(fold: FoldData, plan: StrategyPlan, s: StrategySettings):
    model = assemble(plan, s.fusion, s.backbone, s.blocks)
    inputs = model.make_inputs(fold.texts_train, fold.meta_train.values)
    tr, va = _inner_split(fold.y_train, s.validation_fraction, s.seed)
    opt = replace(s.fusion_optimizer, seed=s.seed)
    model, hist = train(
        model, _subset(inputs, tr), fold.y_train[tr], opt, s.loss, val=(_subset(inputs, va), fold.y_train[va])
    )
    return model, hist


def run_strategies(
    fold: FoldData,
    settings: Optional[StrategySettings] = None,
    strategies: Sequence[str] = ("S1", "S2", "S3", "S4"),
    workdir: Optional[str] = None,
) -> dict:
    """Score the held-out rows with meta-only, text-only and each fused strategy.

    The meta and text submodels are trained once and checkpointed; strategies
    that transfer them load those checkpoints.
    """
    s = settings or StrategySettings()
    out = {}
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        meta_model, _ = fit_meta_submodel(fold, s)
        out["meta_only"] = predict_proba(meta_model, {"meta": _meta_tensor(fold.meta_test.values)})
        meta_ckpt = os.path.join(tmp, "meta")
        save_checkpoint(meta_ckpt, meta_model, {"role": "meta", "seed": s.seed})

        text_model, _ = fit_text_submodel(fold, s)
        out["text_only"] = predict_proba(text_model, text_model.make_inputs(fold.texts_test))
        text_ckpt = os.path.join(tmp, "text")
        save_checkpoint(text_ckpt, text_model, {"role": "text", "seed": s.seed})

        for sid in strategies:
            plan = StrategyPlan.for_strategy(sid, seed=s.seed, text_checkpoint=text_ckpt, meta_checkpoint=meta_ckpt)
            fused, _ = fit_fusion(fold, plan, s)
            out[sid] = predict_proba(fused, fused.make_inputs(fold.texts_test, fold.meta_test.values))
    return out


class TextPipeline:
    def __init__(self, settings: Optional[StrategySettings] = None):
        self.settings = settings or StrategySettings()

    def fit_predict(self, fold: FoldData) -> np.ndarray:
        model, _ = fit_text_submodel(fold, self.settings)
        return predict_proba(model, model.make_inputs(fold.texts_test))


class FusionPipeline:
    def __init__(self, strategy: str = "S4", settings: Optional[StrategySettings] = None):
        self.strategy = strategy
        self.settings = settings or StrategySettings()

    def fit_predict(self, fold: FoldData) -> np.ndarray:
        return run_strategies(fold, self.settings, strategies=(self.strategy,))[self.strategy]
