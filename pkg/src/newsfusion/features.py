"""Metadata feature engineering and post-text normalization."""

from __future__ import annotations

import html
import json
import re
import unicodedata
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .dataset import RELIABLE

TIME_FIELDS = ("minute", "hour", "day", "month", "year", "weekday", "is_weekend")
META_COLUMNS = (
    ("likes", "comments", "shares", "text_length")
    + TIME_FIELDS
    + ("user_score", "image_count", "image_aspect_mean")
)
D_META = len(META_COLUMNS)


# ---------------------------------------------------------------------------
# date-time


@dataclass(frozen=True)
class TimeFeatures:
    minute: int
    hour: int
    day: int
    month: int
    year: int
    weekday: int
    is_weekend: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f) for f in TIME_FIELDS)


def decode_timestamp(ts: int) -> TimeFeatures:
    if ts < 0:
        raise ValueError(f"timestamp must be non-negative, got {ts}")
    dt = datetime.fromtimestamp(int(ts), tz=timezone.utc)
    wd = dt.weekday()
    return TimeFeatures(dt.minute, dt.hour, dt.day, dt.month, dt.year, wd, int(wd >= 5))


# ---------------------------------------------------------------------------
# user reputation


@dataclass(frozen=True)
class UserScoreTable:
    """Laplace-smoothed share of reliable posts per user.

    Rows listed in ``source_ids`` are the training rows the table was built
    from; scoring one of them excludes its own label (leave-one-out).
    """

    counts: dict  # user_id -> (reliable_count, total_count)
    source_ids: frozenset
    alpha: float = 1.0
    own_labels: dict = field(default_factory=dict)  # record id -> label, training rows only

    @property
    def default_score(self) -> float:
        return self.alpha / (2 * self.alpha)

    def score(self, user_id: str, exclude_label: Optional[int] = None) -> float:
        reliable, total = self.counts.get(user_id, (0, 0))
        if exclude_label is not None:
            reliable -= int(exclude_label == RELIABLE)
            total -= 1
        return (reliable + self.alpha) / (total + 2 * self.alpha)

    def score_record(self, rec) -> float:
        if rec.id in self.source_ids:
            return self.score(rec.user_id, exclude_label=self.own_labels[rec.id])
        return self.score(rec.user_id)

    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "default_score": self.default_score,
            "users": {
                u: {"reliable_count": r, "total_count": t, "score": (r + self.alpha) / (t + 2 * self.alpha)}
                for u, (r, t) in sorted(self.counts.items())
            },
            "source_ids": sorted(self.source_ids),
            "own_labels": self.own_labels,
        }

    @classmethod
    def from_json(cls, payload: dict) -> "UserScoreTable":
        return cls(
            counts={u: (v["reliable_count"], v["total_count"]) for u, v in payload["users"].items()},
            source_ids=frozenset(payload["source_ids"]),
            alpha=payload["alpha"],
            own_labels={k: int(v) for k, v in payload["own_labels"].items()},
        )


def compute_user_scores(train_records: Sequence, alpha: float = 1.0) -> UserScoreTable:
    counts: dict = {}
    own = {}
    for rec in train_records:
        if rec.label is None:
            raise ValueError(f"record {rec.id} is unlabeled; user scores need training labels")
        reliable, total = counts.get(rec.user_id, (0, 0))
        counts[rec.user_id] = (reliable + int(rec.label == RELIABLE), total + 1)
        own[rec.id] = int(rec.label)
    return UserScoreTable(counts=counts, source_ids=frozenset(own), alpha=alpha, own_labels=own)


# ---------------------------------------------------------------------------
# images

ImageResolver = Callable[[str], Optional[tuple]]

_DIMS_IN_NAME = re.compile(r"(\d+)x(\d+)")


def dimensions_from_name(ref: str) -> Optional[tuple]:
    """Resolver reading ``<width>x<height>`` embedded in the file name."""
    m = _DIMS_IN_NAME.search(ref.rsplit("/", 1)[-1])
    if not m:
        return None
    return int(m.group(1)), int(m.group(2))


class PillowResolver:
    """Resolver opening local image files (header only) under ``root``."""

    def __init__(self, root: str = "."):
        self.root = root

    def __call__(self, ref: str) -> Optional[tuple]:
        import os

        from PIL import Image

        path = ref if os.path.isabs(ref) else os.path.join(self.root, ref)
        try:
            with Image.open(path) as img:
                return img.size
        except OSError:
            return None


def compute_image_features(image_refs: Sequence[str], resolver: Optional[ImageResolver] = None) -> tuple:
    ratios = []
    if resolver is not None:
        for ref in image_refs:
            try:
                dims = resolver(ref)
            except Exception:
                dims = None
            if dims and dims[1] > 0:
                ratios.append(dims[0] / dims[1])
    return len(image_refs), (float(np.mean(ratios)) if ratios else 0.0)


# ---------------------------------------------------------------------------
# text normalization


@dataclass(frozen=True)
class NormalizedText:
    text: str
    replacement_counts: dict


@lru_cache(maxsize=None)
def load_text_patterns() -> dict:
    raw = resources.files("newsfusion").joinpath("data/text_patterns.json").read_text("utf-8")
    return json.loads(raw)


@lru_cache(maxsize=None)
def _compiled():
    cfg = load_text_patterns()
    patterns = [(kind, re.compile(cfg["patterns"][kind]), cfg["tokens"][kind]) for kind in cfg["order"]]
    return re.compile(cfg["html_tag"], re.S), patterns


_TONES = ("\u0300", "\u0301", "\u0309", "\u0303", "\u0323")  # grave, acute, hook, tilde, dot


def _tone_table() -> dict:
    table = {}
    for pair in ("oa", "oe", "uy"):
        for upper_first in (False, True):
            for upper_second in (False, True):
                a = pair[0].upper() if upper_first else pair[0]
                b = pair[1].upper() if upper_second else pair[1]
                for tone in _TONES:
                    old = unicodedata.normalize("NFC", a + tone) + b
                    new = a + unicodedata.normalize("NFC", b + tone)
                    table[old] = new
    return table


_TONE_MAP = _tone_table()
# Only rewrite when the vowel pair closes the syllable (no following letter).
_TONE_RE = re.compile("(" + "|".join(sorted(_TONE_MAP, key=len, reverse=True)) + r")(?![^\W\d_])")
_WS = re.compile(r"\s+")


def standardize_vietnamese(text: str) -> str:
    """NFC-compose and move legacy tone marks (hòa, thúy) to the modern vowel (hoà, thuý)."""
    text = unicodedata.normalize("NFC", text)
    return _TONE_RE.sub(lambda m: _TONE_MAP[m.group(1)], text)


def strip_html(text: str) -> str:
    tag_re, _ = _compiled()
    while True:
        stripped = tag_re.sub(" ", html.unescape(text))
        if stripped == text:
            return text
        text = stripped


def normalize_text(raw: Optional[str]) -> NormalizedText:
    _, patterns = _compiled()
    counts = {kind: 0 for kind, _, _ in patterns}
    if not raw:
        return NormalizedText("", counts)
    text = strip_html(raw)
    text = standardize_vietnamese(text)
    text = _WS.sub(" ", text)
    for kind, regex, token in patterns:
        text, n = regex.subn(f" {token} ", text)
        counts[kind] = n
    text = _WS.sub(" ", text).strip()
    return NormalizedText(text, counts)


# ---------------------------------------------------------------------------
# metadata matrix


@dataclass(frozen=True)
class MetaScaler:
    mean: np.ndarray
    std: np.ndarray  # 0 marks a zero-variance column
    source_ids: frozenset

    def transform(self, raw: np.ndarray) -> np.ndarray:
        safe = np.where(self.std > 0, self.std, 1.0)
        out = (raw - self.mean) / safe
        out[:, self.std == 0] = 0.0
        return out


def fit_scaler(raw: np.ndarray, ids: Iterable[str]) -> MetaScaler:
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    scale = np.maximum(1.0, np.abs(mean))
    std = np.where(std <= 1e-12 * scale, 0.0, std)
    return MetaScaler(mean=mean, std=std, source_ids=frozenset(ids))


@dataclass
class MetaMatrix:
    values: np.ndarray  # standardized, n x D_META
    raw: np.ndarray
    ids: list
    scaler: MetaScaler
    columns: tuple = META_COLUMNS


def meta_feature_vector(rec, scores: UserScoreTable, resolver: Optional[ImageResolver] = None) -> np.ndarray:
    tf = decode_timestamp(rec.timestamp)
    n_img, aspect = compute_image_features(rec.image_refs, resolver)
    text_len = len(normalize_text(rec.text).text)
    return np.array(
        [rec.likes, rec.comments, rec.shares, text_len, *tf.as_tuple(), scores.score_record(rec), n_img, aspect],
        dtype=np.float64,
    )


def build_meta_matrix(
    records: Sequence,
    scores: UserScoreTable,
    scaler: Optional[MetaScaler] = None,
    resolver: Optional[ImageResolver] = None,
) -> MetaMatrix:
    """Featurize cleaned records and z-score them.

    Without ``scaler`` the statistics are fitted on ``records`` (pass the
    training split); otherwise the given training statistics are applied.
    """
    raw = np.zeros((len(records), D_META))
    for i, rec in enumerate(records):
        raw[i] = meta_feature_vector(rec, scores, resolver)
    ids = [r.id for r in records]
    if scaler is None:
        scaler = fit_scaler(raw, ids)
    values = scaler.transform(raw)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("non-finite value in metadata matrix")
    return MetaMatrix(values=values, raw=raw, ids=ids, scaler=scaler)


def save_meta_matrix(mm: MetaMatrix, path: str) -> None:
    """Columnar ``.npz`` (one array per column) plus a ``.json`` sidecar."""
    stem = path[:-4] if path.endswith(".npz") else path
    np.savez(stem + ".npz", ids=np.array(mm.ids, dtype=str), **{c: mm.values[:, j] for j, c in enumerate(mm.columns)})
    sidecar = {
        "columns": list(mm.columns),
        "mean": mm.scaler.mean.tolist(),
        "std": mm.scaler.std.tolist(),
        "n_rows": len(mm.ids),
        "fitted_on": sorted(mm.scaler.source_ids),
    }
    with open(stem + ".json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2)


def load_meta_matrix(path: str) -> tuple[np.ndarray, list, dict]:
    stem = path[:-4] if path.endswith(".npz") else path
    with open(stem + ".json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    with np.load(stem + ".npz") as data:
        values = np.column_stack([data[c] for c in sidecar["columns"]])
        ids = [str(i) for i in data["ids"]]
    return values, ids, sidecar


# ---------------------------------------------------------------------------
# per-split featurization


@dataclass
class FoldData:
    """Everything a model needs for one train/held-out split.

    ``provenance`` names the record ids each fitted artifact was computed
    from, so leakage can be asserted rather than assumed.
    """

    train: list
    test: list
    y_train: np.ndarray
    y_test: Optional[np.ndarray]
    meta_train: MetaMatrix
    meta_test: MetaMatrix
    texts_train: list
    texts_test: list
    user_scores: UserScoreTable
    timestamp_floor: int
    provenance: dict


def prepare_split(train_raw: Sequence, test_raw: Sequence, resolver: Optional[ImageResolver] = None) -> FoldData:
    from .dataset import fill_missing, timestamp_floor

    floor = timestamp_floor(train_raw)
    floor_ids = frozenset(r.id for r in train_raw if r.timestamp is not None and r.timestamp == floor)
    train = fill_missing(train_raw, floor)
    test = fill_missing(test_raw, floor)
    scores = compute_user_scores(train)
    meta_train = build_meta_matrix(train, scores, resolver=resolver)
    meta_test = build_meta_matrix(test, scores, scaler=meta_train.scaler, resolver=resolver)
    y_test = None
    if all(r.label is not None for r in test):
        y_test = np.array([r.label for r in test], dtype=np.int64)
    return FoldData(
        train=train,
        test=test,
        y_train=np.array([r.label for r in train], dtype=np.int64),
        y_test=y_test,
        meta_train=meta_train,
        meta_test=meta_test,
        texts_train=[normalize_text(r.text).text for r in train],
        texts_test=[normalize_text(r.text).text for r in test],
        user_scores=scores,
        timestamp_floor=floor,
        provenance={
            "timestamp_floor": floor_ids,
            "user_scores": scores.source_ids,
            "standardization": meta_train.scaler.source_ids,
        },
    )
