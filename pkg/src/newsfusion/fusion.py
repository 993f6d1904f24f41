"""Multi-input model joining the text and metadata submodels, the four
initialization strategies, and checkpoints carrying a provenance ledger."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
from safetensors.torch import load_file, save_file
from torch import nn

from .features import D_META
from .tabular import MetaMLP
from .textenc import BackboneConfig, ClassifierHead, HeadConfig, build_backbone, check_selection, concat_cls

STRATEGIES = ("S1", "S2", "S3", "S4")
_PLAN_TABLE = {
    # id: (text submodel from fine-tuned checkpoint, meta extractor from pretrained checkpoint)
    "S1": (False, False),
    "S2": (False, True),
    "S3": (True, False),
    "S4": (True, True),
}


class AssemblyError(ValueError):
    pass


@dataclass
class FusionConfig:
    combine: str = "concat"  # "concat" | "add"
    d_text: int = 256
    d_meta_feat: int = 32
    project_dim: int = 128
    fused_hidden: int = 128
    dropout: float = 0.3
    d_meta: int = D_META
    meta_hidden: tuple = (64, 32)
    meta_dropout: float = 0.2

    def __post_init__(self):
        if self.combine not in ("concat", "add"):
            raise ValueError(f"unknown combine mode {self.combine!r}")

    @property
    def fused_input_dim(self) -> int:
        return self.d_text + self.d_meta_feat if self.combine == "concat" else self.project_dim


@dataclass
class StrategyPlan:
    id: str
    text_head_init: str  # "random" | "finetuned_checkpoint"
    meta_init: str  # "random" | "pretrained_checkpoint"
    backbone_init: str = "pretrained"
    text_checkpoint: Optional[str] = None
    meta_checkpoint: Optional[str] = None
    seed: int = 0

    @classmethod
    def for_strategy(cls, strategy: str, seed: int = 0, text_checkpoint=None, meta_checkpoint=None) -> "StrategyPlan":
        sid = strategy.upper()
        if sid not in _PLAN_TABLE:
            raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
        text_ft, meta_pre = _PLAN_TABLE[sid]
        return cls(
            id=sid,
            text_head_init="finetuned_checkpoint" if text_ft else "random",
            meta_init="pretrained_checkpoint" if meta_pre else "random",
            text_checkpoint=text_checkpoint if text_ft else None,
            meta_checkpoint=meta_checkpoint if meta_pre else None,
            seed=seed,
        )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(directory: str, model_or_state, manifest: Optional[dict] = None) -> None:
    """Write ``weights.safetensors`` and ``manifest.json`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    state = model_or_state.state_dict() if isinstance(model_or_state, nn.Module) else model_or_state
    tensors = {k: v.detach().contiguous().cpu() for k, v in state.items()}
    save_file(tensors, os.path.join(directory, "weights.safetensors"))
    manifest = dict(manifest or {})
    if isinstance(model_or_state, FusionModel):
        manifest.setdefault("provenance", model_or_state.provenance)
    manifest.setdefault("parameters", sorted(tensors))
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)


def load_checkpoint(directory: str) -> tuple[dict, dict]:
    weights = os.path.join(directory, "weights.safetensors")
    if not os.path.exists(weights):
        raise FileNotFoundError(f"no checkpoint at {directory!r}")
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        manifest = json.load(fh)
    return load_file(weights), manifest


def inspect_checkpoint(directory: str) -> dict:
    _, manifest = load_checkpoint(directory)
    return manifest.get("provenance", {})


# ---------------------------------------------------------------------------
# the fused model


def combine_features(a, b, mode: str = "concat"):
    if mode == "concat":
        return torch.cat([a, b], dim=-1) if isinstance(a, torch.Tensor) else np.concatenate([a, b], axis=-1)
    if mode == "add":
        if a.shape[-1] != b.shape[-1]:
            raise ValueError(f"add needs equal dims, got {a.shape[-1]} and {b.shape[-1]}")
        return a + b
    raise ValueError(f"unknown combine mode {mode!r}")


class FusionModel(nn.Module):
    def __init__(self, backbone: nn.Module, blocks: Sequence[int], cfg: FusionConfig, text_head_cfg: Optional[HeadConfig] = None):
        super().__init__()
        self.cfg = cfg
        self.backbone = backbone
        self.blocks = check_selection(blocks, backbone.n_blocks)
        head_cfg = text_head_cfg or HeadConfig(hidden=cfg.d_text)
        if head_cfg.hidden != cfg.d_text:
            raise ValueError("text head width must equal FusionConfig.d_text")
        self.text_head = ClassifierHead(len(self.blocks) * backbone.hidden, head_cfg, feature_only=True)
        self.meta = MetaMLP(cfg.d_meta, cfg.meta_hidden, cfg.meta_dropout, feature_only=True)
        if self.meta.feature_dim != cfg.d_meta_feat:
            raise ValueError("meta extractor width must equal FusionConfig.d_meta_feat")
        if cfg.combine == "add":
            self.text_proj = nn.Linear(cfg.d_text, cfg.project_dim)
            self.meta_proj = nn.Linear(cfg.d_meta_feat, cfg.project_dim)
        self.fused_head = ClassifierHead(cfg.fused_input_dim, HeadConfig(hidden=cfg.fused_hidden, dropout=cfg.dropout))
        self.provenance: dict = {}

    def features(self, tokens, mask, meta):
        if tokens.shape[0] != meta.shape[0]:
            raise ValueError(f"batch size mismatch: {tokens.shape[0]} texts vs {meta.shape[0]} meta rows")
        text_feat = self.text_head.features(concat_cls(self.backbone.cls_states(tokens, mask), self.blocks))
        meta_feat = self.meta.feature(meta)
        if self.cfg.combine == "add":
            return combine_features(self.text_proj(text_feat), self.meta_proj(meta_feat), "add")
        return combine_features(text_feat, meta_feat, "concat")

    def forward(self, tokens, mask, meta):
        return self.fused_head(self.features(tokens, mask, meta))[1]

    def logits(self, batch: dict) -> torch.Tensor:
        return self(batch["tokens"], batch["mask"], batch["meta"])

    def layer_groups(self) -> list:
        head = [n for n, _ in self.named_parameters() if not n.startswith("backbone.")]
        return [("head", head)] + self.backbone.layer_groups("backbone.")

    def submodel_groups(self) -> dict:
        names = [n for n, _ in self.named_parameters()]
        return {
            "backbone": [n for n in names if n.startswith("backbone.")],
            "text_head": [n for n in names if n.startswith("text_head.")],
            "meta": [n for n in names if n.startswith("meta.")],
            "fusion": [n for n in names if n.startswith(("fused_head.", "text_proj.", "meta_proj."))],
        }

    def make_inputs(self, texts: Sequence[str], meta) -> dict:
        tokens, mask = self.backbone.tokenize(list(texts))
        dtype = next(self.parameters()).dtype
        return {"tokens": tokens, "mask": mask, "meta": torch.as_tensor(np.asarray(meta), dtype=dtype)}


def fuse_forward(m: FusionModel, texts, meta) -> torch.Tensor:
    if len(texts) != len(meta):
        raise ValueError(f"batch size mismatch: {len(texts)} texts vs {len(meta)} meta rows")
    return m.logits(m.make_inputs(texts, meta))


# ---------------------------------------------------------------------------
# assembly


def _transfer(model: FusionModel, state: dict, mapping: dict, source: str, label: str) -> None:
    """Copy ``state[src] -> model[dst]`` for each ``dst: src`` in ``mapping``."""
    params = dict(model.named_parameters())
    bad = []
    for dst, src in mapping.items():
        if src not in state:
            bad.append(f"{dst} (missing {src} in {label} checkpoint)")
        elif tuple(state[src].shape) != tuple(params[dst].shape):
            bad.append(f"{dst} (shape {tuple(params[dst].shape)} vs checkpoint {tuple(state[src].shape)})")
    if bad:
        raise AssemblyError(f"{label} checkpoint {source!r} does not match the fused model: " + "; ".join(bad))
    with torch.no_grad():
        for dst, src in mapping.items():
            params[dst].copy_(state[src].to(params[dst].dtype))
            model.provenance[dst] = f"checkpoint:{source}#{src}"


def assemble(
    plan: StrategyPlan,
    cfg: Optional[FusionConfig] = None,
    backbone_cfg: Optional[BackboneConfig] = None,
    blocks: Sequence[int] = tuple(range(1, 13)),
) -> FusionModel:
    """Build the fused model with parameter provenance following ``plan``.

    Backbone weights always come from the pretrained source (for the toy
    backbone: its fixed initialization seed). Randomly initialized parts are
    seeded from ``plan.seed``.
    """
    cfg = cfg or FusionConfig()
    backbone_cfg = backbone_cfg or BackboneConfig()
    text_ft, meta_pre = _PLAN_TABLE[plan.id]
    if text_ft and not plan.text_checkpoint:
        raise AssemblyError(f"strategy {plan.id} needs a fine-tuned text checkpoint (text_checkpoint is unset)")
    if meta_pre and not plan.meta_checkpoint:
        raise AssemblyError(f"strategy {plan.id} needs a pretrained meta checkpoint (meta_checkpoint is unset)")

    backbone = build_backbone(backbone_cfg)
    rng_state = torch.random.get_rng_state()
    torch.manual_seed(plan.seed)
    model = FusionModel(backbone, blocks, cfg)
    torch.random.set_rng_state(rng_state)

    source = backbone_cfg.checkpoint_path if backbone_cfg.kind == "pretrained" else f"toy-seed-{backbone_cfg.seed}"
    for name, _ in model.named_parameters():
        model.provenance[name] = f"pretrained:{source}" if name.startswith("backbone.") else f"random:{plan.seed}"

    if text_ft:
        state, _ = load_checkpoint(plan.text_checkpoint)
        mapping = {}
        for name, _ in model.named_parameters():
            if name.startswith("backbone."):
                mapping[name] = name
            elif name.startswith("text_head."):
                mapping[name] = "head." + name[len("text_head.") :]
        _transfer(model, state, mapping, plan.text_checkpoint, "text")
    if meta_pre:
        state, _ = load_checkpoint(plan.meta_checkpoint)
        mapping = {n: n[len("meta.") :] for n, _ in model.named_parameters() if n.startswith("meta.")}
        _transfer(model, state, mapping, plan.meta_checkpoint, "meta")
    return model


def expected_origin(name: str, plan: StrategyPlan, backbone_source: str) -> str:
    text_ft, meta_pre = _PLAN_TABLE[plan.id]
    if name.startswith("backbone."):
        if text_ft:
            return f"checkpoint:{plan.text_checkpoint}#{name}"
        return f"pretrained:{backbone_source}"
    if name.startswith("text_head.") and text_ft:
        return f"checkpoint:{plan.text_checkpoint}#head.{name[len('text_head.'):]}"
    if name.startswith("meta.") and meta_pre:
        return f"checkpoint:{plan.meta_checkpoint}#{name[len('meta.'):]}"
    return f"random:{plan.seed}"


def verify_provenance(model: FusionModel, plan: StrategyPlan, backbone_cfg: BackboneConfig) -> list:
    """Return a list of parameters whose recorded origin breaks the plan table."""
    source = backbone_cfg.checkpoint_path if backbone_cfg.kind == "pretrained" else f"toy-seed-{backbone_cfg.seed}"
    problems = []
    names = [n for n, _ in model.named_parameters()]
    if set(model.provenance) != set(names):
        problems.append("ledger and parameter names differ")
    for n in names:
        want = expected_origin(n, plan, source)
        if model.provenance.get(n) != want:
            problems.append(f"{n}: recorded {model.provenance.get(n)!r}, expected {want!r}")
    if any(n.startswith("meta.output") for n in names):
        problems.append("meta output layer present in fused model")
    return problems


def plan_to_json(plan: StrategyPlan) -> dict:
    return asdict(plan)
