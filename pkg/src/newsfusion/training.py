"""Optimization regimen: smoothed cross-entropy, selective weight decay,
warmup schedule, gradual unfreezing, discriminative learning rates, the
training loop and cross-validation."""

from __future__ import annotations

import copy
import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import nn

from .dataset import make_folds
from .evaluation import UndefinedMetricError, roc_auc
from .features import prepare_split

log = logging.getLogger(__name__)

NO_DECAY_PATTERNS = (
    r"(^|\.)bias$",
    r"_bias$",
    r"(^|\.)(norm\w*|LayerNorm|layer_norm|ln\w*)\.(weight|bias)$",
)
DECAY_PATTERNS = (r"(^|\.)weight$", r"_weight$")


@dataclass
class OptimizerConfig:
    base_lr: float = 1e-5
    max_lr: float = 2e-5
    batch_size: int = 32
    epochs: int = 20
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    use_schedule: bool = True
    gradual_unfreezing: bool = True
    epochs_per_group: int = 1
    discriminative_factor: float = 0.95
    no_decay_patterns: tuple = NO_DECAY_PATTERNS
    decay_patterns: tuple = DECAY_PATTERNS
    seed: int = 0


@dataclass
class SmoothingLossConfig:
    epsilon: float = 0.15
    n_classes: int = 2

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"smoothing epsilon must lie in [0, 1), got {self.epsilon}")


# ---------------------------------------------------------------------------
# loss


def smoothed_targets(labels: torch.Tensor, n_classes: int, epsilon: float) -> torch.Tensor:
    q = torch.full((labels.shape[0], n_classes), epsilon / n_classes, dtype=torch.float64)
    q[torch.arange(labels.shape[0]), labels] += 1.0 - epsilon
    return q


def label_smoothing_ce(logits, labels, epsilon: float = 0.15) -> torch.Tensor:
    """Batch mean of -sum_c q_c log softmax(logits)_c with
    q = (1 - eps) * onehot + eps / K."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"smoothing epsilon must lie in [0, 1), got {epsilon}")
    logits = torch.as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=torch.long)
    k = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    logp = torch.log_softmax(logits, dim=-1)
    q = smoothed_targets(labels, k, epsilon).to(logp.dtype)
    return -(q * logp).sum(dim=-1).mean()


def label_smoothing_ce_grad(logits, labels, epsilon: float = 0.15) -> np.ndarray:
    """Closed-form d loss / d logits = (softmax - q) / n."""
    logits = torch.as_tensor(logits, dtype=torch.float64)
    labels = torch.as_tensor(labels, dtype=torch.long)
    q = smoothed_targets(labels, logits.shape[-1], epsilon)
    return ((torch.softmax(logits, dim=-1) - q) / logits.shape[0]).numpy()


def smoothed_target_entropy(epsilon: float, n_classes: int = 2) -> float:
    """Lower bound of the smoothed loss over all predictions."""
    hi = 1.0 - epsilon + epsilon / n_classes
    lo = epsilon / n_classes
    return -(hi * math.log(hi) + (n_classes - 1) * (lo * math.log(lo) if lo > 0 else 0.0))


# ---------------------------------------------------------------------------
# parameter groups


@dataclass
class DiscriminativeLRMap:
    """Group multiplier factor**depth; depth 0 is the head, then the top block."""

    factor: float = 0.95

    def multipliers(self, group_names: Sequence[str]) -> dict:
        return {name: self.factor**depth for depth, name in enumerate(group_names)}


def classify_param(name: str, cfg: OptimizerConfig) -> str:
    if any(re.search(p, name) for p in cfg.no_decay_patterns):
        return "no_decay"
    if any(re.search(p, name) for p in cfg.decay_patterns):
        return "decay"
    raise ValueError(f"parameter {name!r} matches neither decay nor no_decay patterns")


def build_param_groups(model: nn.Module, cfg: OptimizerConfig, lr_map: Optional[DiscriminativeLRMap] = None) -> list:
    """Partition parameters into (layer group) x (decay / no_decay).

    ``model.layer_groups()`` lists parameter names from the head downward;
    every parameter must appear in exactly one layer group.
    """
    lr_map = lr_map or DiscriminativeLRMap(cfg.discriminative_factor)
    named = dict(model.named_parameters())
    layer_groups = model.layer_groups()
    seen = {}
    for gname, names in layer_groups:
        for n in names:
            if n in seen:
                raise ValueError(f"parameter {n!r} listed in both {seen[n]!r} and {gname!r}")
            if n not in named:
                raise ValueError(f"layer group {gname!r} names unknown parameter {n!r}")
            seen[n] = gname
    missing = sorted(set(named) - set(seen))
    if missing:
        raise ValueError(f"parameters outside every layer group: {missing}")

    mults = lr_map.multipliers([g for g, _ in layer_groups])
    groups = []
    for depth, (gname, names) in enumerate(layer_groups):
        for kind in ("decay", "no_decay"):
            members = [n for n in names if classify_param(n, cfg) == kind]
            if not members:
                continue
            groups.append(
                {
                    "params": [named[n] for n in members],
                    "names": members,
                    "layer_group": gname,
                    "kind": kind,
                    "depth": depth,
                    "lr_mult": mults[gname],
                    "weight_decay": cfg.weight_decay if kind == "decay" else 0.0,
                    "lr": 0.0,
                }
            )
    return groups


# ---------------------------------------------------------------------------
# schedules


def lr_at(step: float, total_steps: int, cfg: OptimizerConfig) -> float:
    """Linear warmup to ``max_lr`` over ``warmup_fraction`` of the steps, then
    linear decay to zero at ``total_steps``."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = cfg.warmup_fraction * total_steps
    if step < warm:
        return cfg.max_lr * step / warm
    if warm >= total_steps:
        return cfg.max_lr
    return cfg.max_lr * (total_steps - step) / (total_steps - warm)


@dataclass
class UnfreezeSchedule:
    groups: Sequence[str]  # head first, then backbone blocks top-down
    epochs_per_group: int = 1


def unfreeze_step(schedule: UnfreezeSchedule, epoch: int) -> set:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    n_open = min(len(schedule.groups), epoch // max(1, schedule.epochs_per_group) + 1)
    return set(schedule.groups[:n_open])


# ---------------------------------------------------------------------------
# training loop


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class History:
    records: list = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_auc: Optional[float] = None

    @property
    def losses(self) -> list:
        return [r["loss"] for r in self.records]

    def to_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps(r) + "\n")


def _batch(inputs: dict, idx) -> dict:
    return {k: v[idx] for k, v in inputs.items()}


def _safe_auc(scores, labels) -> Optional[float]:
    try:
        return roc_auc(scores, labels)
    except UndefinedMetricError:
        return None


def train(
    model: nn.Module,
    inputs: dict,
    labels,
    cfg: Optional[OptimizerConfig] = None,
    loss_cfg: Optional[SmoothingLossConfig] = None,
    schedule: Optional[UnfreezeSchedule] = None,
    lr_map: Optional[DiscriminativeLRMap] = None,
    val: Optional[tuple] = None,
    history_path: Optional[str] = None,
):
    """Fit ``model`` (anything exposing ``logits(batch)`` and ``layer_groups()``).

    ``inputs`` is a dict of equally long tensors; ``val`` an optional
    ``(inputs, labels)`` pair used for per-epoch AUC and best-epoch selection.
    Returns ``(model, history)`` with the best-validation weights loaded.
    """
    from .textenc import predict_proba

    cfg = cfg or OptimizerConfig()
    loss_cfg = loss_cfg or SmoothingLossConfig()
    labels = torch.as_tensor(np.asarray(labels), dtype=torch.long)
    n = labels.shape[0]
    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)

    groups = build_param_groups(model, cfg, lr_map)
    optim_groups = [{k: g[k] for k in ("params", "weight_decay", "lr")} for g in groups]
    optimizer = torch.optim.AdamW(optim_groups, lr=cfg.max_lr)
    layer_order = [g for g, _ in model.layer_groups()]
    if schedule is None:
        schedule = UnfreezeSchedule(layer_order if cfg.gradual_unfreezing else [], cfg.epochs_per_group)
    named = dict(model.named_parameters())

    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    history = History()
    best_state, best_auc = None, -math.inf
    step = 0
    for epoch in range(cfg.epochs):
        open_groups = unfreeze_step(schedule, epoch) if schedule.groups else set(layer_order)
        for gname, names in model.layer_groups():
            for pn in names:
                named[pn].requires_grad_(gname in open_groups)
        model.train()
        perm = torch.randperm(n, generator=gen)
        epoch_loss, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            base = lr_at(step, total, cfg) if cfg.use_schedule else cfg.base_lr
            for g, og in zip(groups, optim_groups):
                og["lr"] = base * g["lr_mult"]
            loss = label_smoothing_ce(model.logits(_batch(inputs, idx)), labels[idx], loss_cfg.epsilon)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (lr={base:.3g}, batch rows {idx.tolist()[:16]}...)"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(idx)
            seen += len(idx)
            step += 1
        rec = {
            "epoch": epoch,
            "step": step,
            "lr": base,
            "loss": epoch_loss / max(1, seen),
            "val_auc": None,
            "trainable": sorted(open_groups),
        }
        if val is not None:
            rec["val_auc"] = _safe_auc(predict_proba(model, val[0]), np.asarray(val[1]))
        history.records.append(rec)
        if val is not None:
            score = rec["val_auc"] if rec["val_auc"] is not None else -math.inf
            if best_state is None or score > best_auc:
                best_auc, best_state = score, copy.deepcopy(model.state_dict())
                history.best_epoch, history.best_val_auc = epoch, rec["val_auc"]
    for p in model.parameters():
        p.requires_grad_(True)
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if history_path:
        history.to_jsonl(history_path)
    return model, history


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CVResult:
    fold_auc: list  # None marks a skipped fold
    provenance: list
    skipped: list

    @property
    def mean(self) -> float:
        vals = [a for a in self.fold_auc if a is not None]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def std(self) -> float:
        vals = [a for a in self.fold_auc if a is not None]
        return float(np.std(vals)) if vals else float("nan")

    def to_json(self) -> dict:
        return {"fold_auc": self.fold_auc, "mean": self.mean, "std": self.std, "skipped": self.skipped}


def cross_validate(
    pipeline,
    corpus: Sequence,
    k: int = 10,
    seed: int = 0,
    stratified: bool = True,
    resolver: Optional[Callable] = None,
    on_fold: Optional[Callable] = None,
) -> CVResult:
    """k-fold evaluation of ``pipeline.fit_predict(fold_data) -> test scores``.

    Missing-value floors, user scores and standardization are refitted inside
    every training portion; ``on_fold(i, fold_data)`` sees each split.
    """
    plan = make_folds(corpus, k=k, seed=seed, stratified=stratified)
    fold_auc, provenance, skipped = [], [], []
    for f in range(k):
        train_raw = [corpus[i] for i in plan.train_indices(f)]
        test_raw = [corpus[i] for i in plan.test_indices(f)]
        fold = prepare_split(train_raw, test_raw, resolver)
        if on_fold is not None:
            on_fold(f, fold)
        provenance.append({k_: v for k_, v in fold.provenance.items()})
        if len(set(fold.y_test.tolist())) < 2:
            log.warning("fold %d has a single class; skipped", f)
            fold_auc.append(None)
            skipped.append(f)
            continue
        scores = pipeline.fit_predict(fold)
        fold_auc.append(roc_auc(scores, fold.y_test))
    return CVResult(fold_auc=fold_auc, provenance=provenance, skipped=skipped)
