"""Text encoders exposing per-block [CLS] states, block concatenation and the
classification head built on top of them."""

from __future__ import annotations

import os
import re
import zlib
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
import torch
from torch import nn

PAD_ID, CLS_ID = 0, 1


@dataclass
class BackboneConfig:
    kind: str = "toy"  # "toy" | "pretrained"
    n_blocks: int = 12
    hidden: int = 32
    max_sequence_length: int = 64
    tokenizer: str = "hash"  # "hash" or a local tokenizer directory
    checkpoint_path: Optional[str] = None
    # toy-only knobs
    n_heads: int = 2
    ffn: int = 64
    vocab_size: int = 4096
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("toy", "pretrained"):
            raise ValueError(f"unknown backbone kind {self.kind!r}")
        if self.n_blocks < 1 or self.hidden < 1:
            raise ValueError("backbone needs n_blocks >= 1 and hidden >= 1")

    @classmethod
    def pretrained(cls, checkpoint_path: Optional[str] = None, **kw) -> "BackboneConfig":
        kw.setdefault("n_blocks", 12)
        kw.setdefault("hidden", 768)
        kw.setdefault("max_sequence_length", 256)
        return cls(kind="pretrained", checkpoint_path=checkpoint_path, **kw)


@dataclass
class HeadConfig:
    hidden: int = 256
    dropout: float = 0.3
    n_classes: int = 2


# ---------------------------------------------------------------------------
# block selection


def parse_blocks(spec: str) -> tuple:
    """``"1-6"``, ``"9,10,11,12"`` or mixes like ``"1-3,12"`` -> sorted 1-based tuple."""
    out = set()
    for part in str(spec).replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            lo, hi = int(lo), int(hi)
            if lo > hi:
                raise ValueError(f"bad block range {part!r}")
            out.update(range(lo, hi + 1))
        else:
            out.add(int(part))
    if not out:
        raise ValueError(f"empty block selection {spec!r}")
    return tuple(sorted(out))


def check_selection(selection: Sequence[int], n_blocks: int) -> tuple:
    sel = tuple(sorted(set(int(i) for i in selection)))
    if not sel:
        raise ValueError("block selection is empty")
    bad = [i for i in sel if not 1 <= i <= n_blocks]
    if bad:
        raise IndexError(f"blocks {bad} outside [1, {n_blocks}]")
    return sel


# ---------------------------------------------------------------------------
# tokenization

_TOKEN_RE = re.compile(r"<[a-z]+>|\w+|[^\w\s]")


class HashTokenizer:
    """Whitespace/punctuation tokenizer hashing words into a fixed vocabulary."""

    def __init__(self, vocab_size: int = 4096):
        self.vocab_size = vocab_size

    def token_ids(self, text: str) -> list:
        return [2 + zlib.crc32(tok.encode("utf-8")) % (self.vocab_size - 2) for tok in _TOKEN_RE.findall(text.lower())]

    def __call__(self, texts: Sequence[str], max_length: int):
        rows = [[CLS_ID] + self.token_ids(t)[: max_length - 1] for t in texts]
        width = max((len(r) for r in rows), default=1)
        ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
        for i, r in enumerate(rows):
            ids[i, : len(r)] = torch.tensor(r, dtype=torch.long)
        return ids, ids != PAD_ID


class _HFTokenizer:
    def __init__(self, path: str):
        from transformers import AutoTokenizer

        self.tok = AutoTokenizer.from_pretrained(path, local_files_only=True)

    def __call__(self, texts: Sequence[str], max_length: int):
        enc = self.tok(list(texts), padding=True, truncation=True, max_length=max_length, return_tensors="pt")
        return enc["input_ids"], enc["attention_mask"].bool()


# ---------------------------------------------------------------------------
# backbones


class ToyBackbone(nn.Module):
    """Small post-norm transformer encoder, randomly initialised from ``cfg.seed``."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.n_blocks = cfg.n_blocks
        self.hidden = cfg.hidden
        self.tokenizer = HashTokenizer(cfg.vocab_size)
        gen_state = torch.random.get_rng_state()
        torch.manual_seed(cfg.seed)
        self.embeddings = nn.ModuleDict(
            {
                "tokens": nn.Embedding(cfg.vocab_size, cfg.hidden, padding_idx=PAD_ID),
                "positions": nn.Embedding(cfg.max_sequence_length, cfg.hidden),
                "norm": nn.LayerNorm(cfg.hidden),
            }
        )
        self.blocks = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=cfg.hidden,
                nhead=cfg.n_heads,
                dim_feedforward=cfg.ffn,
                dropout=cfg.dropout,
                batch_first=True,
            )
            for _ in range(cfg.n_blocks)
        )
        torch.random.set_rng_state(gen_state)

    def tokenize(self, texts: Sequence[str]):
        return self.tokenizer(texts, self.cfg.max_sequence_length)

    def hidden_states(self, tokens: torch.Tensor, mask: torch.Tensor) -> list:
        pos = torch.arange(tokens.shape[1], device=tokens.device)
        h = self.embeddings["tokens"](tokens) + self.embeddings["positions"](pos)[None]
        h = self.embeddings["norm"](h)
        states = []
        for block in self.blocks:
            h = block(h, src_key_padding_mask=~mask)
            states.append(h)
        return states

    def cls_states(self, tokens, mask) -> torch.Tensor:
        """(batch, L, H) stack of position-0 states after each block."""
        return torch.stack([h[:, 0] for h in self.hidden_states(tokens, mask)], dim=1)

    def layer_groups(self, prefix: str = "") -> list:
        """Parameter-name groups from the top block down to the embeddings."""
        groups = []
        for i in reversed(range(self.n_blocks)):
            names = [f"{prefix}blocks.{i}.{n}" for n, _ in self.blocks[i].named_parameters()]
            groups.append((f"block_{i + 1}", names))
        groups.append(("embeddings", [f"{prefix}embeddings.{n}" for n, _ in self.embeddings.named_parameters()]))
        return groups


class PretrainedBackbone(nn.Module):
    """Adapter around a locally stored Hugging Face encoder (BERT/RoBERTa family).

    Weights are read from ``cfg.checkpoint_path`` only; nothing is downloaded.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        if not cfg.checkpoint_path or not os.path.isdir(cfg.checkpoint_path):
            raise FileNotFoundError(f"pretrained backbone checkpoint not found: {cfg.checkpoint_path!r}")
        from transformers import AutoModel

        self.encoder = AutoModel.from_pretrained(cfg.checkpoint_path, local_files_only=True, add_pooling_layer=False)
        hf = self.encoder.config
        cfg.n_blocks, cfg.hidden = hf.num_hidden_layers, hf.hidden_size
        self.cfg = cfg
        self.n_blocks, self.hidden = cfg.n_blocks, cfg.hidden
        if cfg.tokenizer == "hash":
            self.tokenizer = HashTokenizer(hf.vocab_size)
        else:
            self.tokenizer = _HFTokenizer(cfg.tokenizer)

    def tokenize(self, texts):
        return self.tokenizer(texts, self.cfg.max_sequence_length)

    def hidden_states(self, tokens, mask) -> list:
        out = self.encoder(input_ids=tokens, attention_mask=mask.long(), output_hidden_states=True)
        return list(out.hidden_states[1:])  # drop the embedding output

    def cls_states(self, tokens, mask):
        return torch.stack([h[:, 0] for h in self.hidden_states(tokens, mask)], dim=1)

    def layer_groups(self, prefix: str = "") -> list:
        names = [n for n, _ in self.named_parameters()]
        groups = []
        claimed = set()
        for i in reversed(range(self.n_blocks)):
            tag = f"encoder.encoder.layer.{i}."
            block = [n for n in names if n.startswith(tag)]
            claimed.update(block)
            groups.append((f"block_{i + 1}", [prefix + n for n in block]))
        groups.append(("embeddings", [prefix + n for n in names if n not in claimed]))
        return groups


def build_backbone(cfg: BackboneConfig) -> nn.Module:
    return ToyBackbone(cfg) if cfg.kind == "toy" else PretrainedBackbone(cfg)


# ---------------------------------------------------------------------------
# encoding and concatenation


@dataclass
class EncoderOutput:
    cls_states: np.ndarray  # L x H


@torch.no_grad()
def encode(backbone: nn.Module, texts: Sequence[str], batch_size: int = 64) -> list:
    if len(texts) == 0:
        return []
    was_training = backbone.training
    backbone.eval()
    out = []
    try:
        for start in range(0, len(texts), batch_size):
            tokens, mask = backbone.tokenize(texts[start : start + batch_size])
            cls = backbone.cls_states(tokens, mask)
            out.extend(EncoderOutput(c.detach().cpu().numpy()) for c in cls)
    finally:
        backbone.train(was_training)
    return out


def concat_cls(out, selection: Sequence[int]):
    """Concatenate the selected 1-based blocks' [CLS] rows in ascending order.

    Works on an :class:`EncoderOutput`, an ``L x H`` array, or a batched
    ``(n, L, H)`` tensor (returning ``(n, |sel| * H)``).
    """
    states = out.cls_states if isinstance(out, EncoderOutput) else out
    n_blocks = states.shape[-2]
    idx = [i - 1 for i in check_selection(selection, n_blocks)]
    if isinstance(states, torch.Tensor):
        return states[..., idx, :].flatten(start_dim=-2)
    return np.asarray(states)[..., idx, :].reshape(*states.shape[:-2], -1)


# ---------------------------------------------------------------------------
# heads and the text classifier


class ClassifierHead(nn.Module):
    """Dropout MLP head. With ``feature_only`` the output layer is omitted and
    the hidden activation is the module's product."""

    def __init__(self, in_dim: int, cfg: Optional[HeadConfig] = None, feature_only: bool = False):
        super().__init__()
        cfg = cfg or HeadConfig()
        self.in_dim = in_dim
        self.drop_in = nn.Dropout(cfg.dropout)
        self.hidden = nn.Linear(in_dim, cfg.hidden)
        self.drop_hidden = nn.Dropout(cfg.dropout)
        self.output = None if feature_only else nn.Linear(cfg.hidden, cfg.n_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"head expects input dim {self.in_dim}, got {x.shape[-1]}")
        return torch.relu(self.hidden(self.drop_in(x)))

    def forward(self, x):
        feats = self.features(x)
        if self.output is None:
            return feats, None
        return feats, self.output(self.drop_hidden(feats))


def head_forward(head: ClassifierHead, features):
    return head(torch.as_tensor(features))


class TextClassifier(nn.Module):
    """Backbone -> concat of selected block [CLS] states -> MLP head."""

    def __init__(self, backbone: nn.Module, blocks: Sequence[int], head_cfg: Optional[HeadConfig] = None):
        super().__init__()
        self.backbone = backbone
        self.blocks = check_selection(blocks, backbone.n_blocks)
        self.head = ClassifierHead(len(self.blocks) * backbone.hidden, head_cfg)

    @property
    def head_input_dim(self) -> int:
        return self.head.in_dim

    def forward(self, tokens, mask):
        feats = concat_cls(self.backbone.cls_states(tokens, mask), self.blocks)
        return self.head(feats)

    def logits(self, batch: dict) -> torch.Tensor:
        return self(batch["tokens"], batch["mask"])[1]

    def layer_groups(self) -> list:
        return [("head", [f"head.{n}" for n, _ in self.head.named_parameters()])] + self.backbone.layer_groups("backbone.")

    def make_inputs(self, texts: Sequence[str]) -> dict:
        tokens, mask = self.backbone.tokenize(list(texts))
        return {"tokens": tokens, "mask": mask}


@torch.no_grad()
def predict_proba(model: nn.Module, inputs: dict, batch_size: int = 256) -> np.ndarray:
    """Unreliable-class probabilities for any model exposing ``logits(batch)``."""
    was_training = model.training
    model.eval()
    n = next(iter(inputs.values())).shape[0]
    out = []
    try:
        for start in range(0, n, batch_size):
            batch = {k: v[start : start + batch_size] for k, v in inputs.items()}
            out.append(torch.softmax(model.logits(batch), dim=-1)[:, 1])
    finally:
        model.train(was_training)
    return torch.cat(out).double().numpy() if out else np.zeros(0)


def ensemble_block_variants(models: Sequence[nn.Module], texts_or_inputs) -> np.ndarray:
    """Unweighted mean of the models' unreliable-class probabilities."""
    if not models:
        raise ValueError("ensemble needs at least one model")
    scores = []
    for m in models:
        inputs = m.make_inputs(texts_or_inputs) if not isinstance(texts_or_inputs, dict) else texts_or_inputs
        scores.append(predict_proba(m, inputs))
    return np.mean(scores, axis=0)
