"""Corpus ingestion, row validation, missing-value filling and fold planning."""

from __future__ import annotations

import ast
import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from typing import Iterable, Optional, Sequence

import numpy as np

LOGICAL_FIELDS = (
    "id",
    "user_id",
    "text",
    "timestamp",
    "likes",
    "comments",
    "shares",
    "image_refs",
    "label",
)
OPTIONAL_FIELDS = ("image_refs", "label")
COUNT_FIELDS = ("likes", "comments", "shares")

# Header names used by the public ReINTEL release.
DEFAULT_SCHEMA = {
    "id": "id",
    "user_id": "user_name",
    "text": "post_message",
    "timestamp": "timestamp_post",
    "likes": "num_like_post",
    "comments": "num_comment_post",
    "shares": "num_share_post",
    "image_refs": "image_links",
    "label": "label",
}

RELIABLE, UNRELIABLE = 0, 1


class SchemaError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class RawRecord:
    id: str
    user_id: str = ""
    text: Optional[str] = None
    timestamp: Optional[int] = None
    likes: Optional[int] = None
    comments: Optional[int] = None
    shares: Optional[int] = None
    image_refs: tuple = ()
    label: Optional[int] = None


@dataclass(frozen=True)
class CleanRecord:
    id: str
    user_id: str
    text: str
    timestamp: int
    likes: int
    comments: int
    shares: int
    image_refs: tuple
    label: Optional[int] = None


@dataclass
class FoldPlan:
    k: int
    assignments: np.ndarray
    stratified: bool = True
    seed: int = 0

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "k": self.k,
            "stratified": self.stratified,
            "assignments": [int(a) for a in self.assignments],
        }

    @classmethod
    def from_json(cls, payload: dict) -> "FoldPlan":
        return cls(
            k=int(payload["k"]),
            assignments=np.asarray(payload["assignments"], dtype=np.int64),
            stratified=bool(payload.get("stratified", True)),
            seed=int(payload.get("seed", 0)),
        )


# ---------------------------------------------------------------------------
# loading / writing


def _parse_int(cell: str) -> Optional[int]:
    cell = cell.strip()
    if not cell or cell.lower() in {"nan", "none", "null"}:
        return None
    try:
        return int(cell)
    except ValueError:
        pass
    try:
        value = float(cell)
    except ValueError:
        return None
    if not math.isfinite(value) or value != int(value):
        return None
    return int(value)


def _parse_timestamp(cell: str) -> Optional[int]:
    value = _parse_int(cell)
    if value is not None:
        return value
    cell = cell.strip()
    if not cell:
        return None
    try:
        parsed = datetime.fromisoformat(cell)
    except ValueError:
        return None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return int(parsed.timestamp())


def _parse_refs(cell: str) -> tuple:
    cell = cell.strip()
    if not cell or cell.lower() in {"nan", "none", "null", "0"}:
        return ()
    if cell.startswith("["):
        try:
            value = ast.literal_eval(cell)
        except (ValueError, SyntaxError):
            value = None
        if isinstance(value, (list, tuple)):
            return tuple(str(v) for v in value if str(v).strip())
    return tuple(part for part in cell.replace(";", " ").split() if part)


def _delimiter_for(path: str) -> str:
    return "\t" if path.lower().endswith((".tsv", ".tab")) else ","


def load_corpus(path: str, schema: Optional[dict] = None) -> list[RawRecord]:
    """Read a delimited corpus file into RawRecords, preserving file order.

    ``schema`` maps logical field names to column headers. Cells that cannot be
    parsed become missing (``None``). ``image_refs`` and ``label`` columns may
    be absent from the file (test splits carry no label).
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    unknown = set(schema) - set(LOGICAL_FIELDS)
    if unknown:
        raise SchemaError(f"unknown logical fields in schema: {sorted(unknown)}")
    for name in LOGICAL_FIELDS:
        if name not in schema and name not in OPTIONAL_FIELDS:
            raise SchemaError(f"schema does not map required field {name!r}")

    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=_delimiter_for(path))
        header = reader.fieldnames or []
        for name, column in schema.items():
            if column not in header and name not in OPTIONAL_FIELDS:
                raise SchemaError(f"column {column!r} (for {name}) not found in {path}")
        present = {name: col for name, col in schema.items() if col in header}

        records = []
        for row in reader:
            get = lambda name: (row.get(present[name]) or "") if name in present else ""
            records.append(
                RawRecord(
                    id=get("id").strip(),
                    user_id=get("user_id").strip(),
                    text=get("text") if get("text") != "" else None,
                    timestamp=_parse_timestamp(get("timestamp")),
                    likes=_parse_int(get("likes")),
                    comments=_parse_int(get("comments")),
                    shares=_parse_int(get("shares")),
                    image_refs=_parse_refs(get("image_refs")),
                    label=_parse_int(get("label")),
                )
            )
    return records


def write_corpus(records: Iterable, path: str, schema: Optional[dict] = None) -> None:
    """Write Raw/CleanRecords back out in the loader's format."""
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    columns = [schema[name] for name in LOGICAL_FIELDS if name in schema]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=_delimiter_for(path), lineterminator="\n")
        writer.writerow(columns)
        for rec in records:
            row = []
            for name in LOGICAL_FIELDS:
                if name not in schema:
                    continue
                value = getattr(rec, name)
                if name == "image_refs":
                    value = json.dumps(list(value), ensure_ascii=False) if value else ""
                row.append("" if value is None else value)
            writer.writerow(row)


# ---------------------------------------------------------------------------
# cleaning


def _invalid_reason(rec: RawRecord) -> Optional[str]:
    if not rec.id or not rec.id.strip():
        return "empty id"
    if rec.label is not None and rec.label not in (RELIABLE, UNRELIABLE):
        return "invalid label"
    for name in COUNT_FIELDS:
        value = getattr(rec, name)
        if value is not None and value < 0:
            return "negative count"
    if rec.timestamp is not None and rec.timestamp < 0:
        return "negative timestamp"
    return None


def drop_invalid(records: Sequence[RawRecord]) -> tuple[list[RawRecord], list[dict]]:
    kept, report = [], []
    for rec in records:
        reason = _invalid_reason(rec)
        if reason is None:
            kept.append(rec)
        else:
            report.append({"id": rec.id, "reason": reason})
    return kept, report


def timestamp_floor(records: Sequence) -> int:
    """Minimum present timestamp; call this on the training split only."""
    present = [r.timestamp for r in records if r.timestamp is not None]
    if not present:
        raise ConfigurationError("timestamp floor undefined: every timestamp is missing")
    return min(present)


def fill_missing(records: Sequence, timestamp_floor: Optional[int]) -> list[CleanRecord]:
    """Numbers become 0, timestamps the training minimum, text the empty string."""
    if timestamp_floor is None:
        raise ConfigurationError("timestamp_floor is undefined")
    out = []
    for rec in records:
        out.append(
            CleanRecord(
                id=rec.id,
                user_id=rec.user_id or "",
                text=rec.text if rec.text is not None else "",
                timestamp=rec.timestamp if rec.timestamp is not None else int(timestamp_floor),
                likes=rec.likes if rec.likes is not None else 0,
                comments=rec.comments if rec.comments is not None else 0,
                shares=rec.shares if rec.shares is not None else 0,
                image_refs=tuple(rec.image_refs or ()),
                label=rec.label,
            )
        )
    return out


# ---------------------------------------------------------------------------
# folds


def make_folds(records: Sequence, k: int = 10, seed: int = 0, stratified: bool = True) -> FoldPlan:
    """Balanced (optionally stratified) k-way partition.

    Rows are shuffled within each class, laid out class after class and dealt
    round-robin, so fold sizes and per-fold class counts each differ by <= 1.
    """
    n = len(records)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds record count {n}")
    rng = np.random.default_rng(seed)
    if stratified:
        labels = np.array([r.label for r in records], dtype=object)
        if any(lab is None for lab in labels):
            raise ValueError("stratified folds need every record labeled")
        order = np.concatenate(
            [rng.permutation(np.flatnonzero(labels == c)) for c in (UNRELIABLE, RELIABLE)]
        )
    else:
        order = rng.permutation(n)
    relabel = rng.permutation(k)
    assignments = np.empty(n, dtype=np.int64)
    assignments[order] = relabel[np.arange(n) % k]
    return FoldPlan(k=k, assignments=assignments, stratified=stratified, seed=seed)


# ---------------------------------------------------------------------------
# synthetic corpora

_FILLER = (
    "tin tức hôm nay người dân thành phố chính quyền thông báo về việc "
    "cập nhật tình hình dịch bệnh mới nhất tại khu vực trung tâm bộ y tế "
    "cho biết các trường hợp đã được cách ly theo dõi sức khỏe gia đình "
    "học sinh trường học giáo viên kinh tế thị trường giá cả xăng dầu "
    "bóng đá đội tuyển thời tiết mưa lớn giao thông công an xã huyện tỉnh"
).split()
# Markers whose frequency shifts with the label.
_UNRELIABLE_MARKERS = ("sốc", "khẩn_cấp", "chia_sẻ_ngay", "sự_thật", "bí_mật", "lan_truyền")
_RELIABLE_MARKERS = ("theo_nguồn", "chính_thức", "báo_cáo", "xác_nhận")
_DECORATIONS = (
    "Liên hệ {user}@gmail.com nhé",
    "xem thêm tại https://tin{n}.vn/bai-viet/{n}",
    "gọi 09{n:08d}",
    "ngày {d}/{m}/2020",
    "<b>tin nóng</b>",
    "😀 😱",
    "<br>",
    "lúc {h}:{mm}",
    "mùa thu hòa bình",
    "thủy thủ khỏe mạnh",
)


@dataclass
class SignalSpec:
    """Generator knobs for :func:`synthesize_corpus`.

    ``strength`` scales every label-feature link; 0 makes labels independent
    of all generated features.
    """

    strength: float = 1.0
    unreliable_share: float = 934 / (4238 + 934)
    posts_per_user: float = 4.0
    user_concentration: float = 2.0
    marker_rate: float = 3.0
    engagement_shift: float = 0.6
    image_rate: float = 0.25
    missing_rate: float = 0.03
    text_words: tuple = (12, 40)


def _user_propensities(rng, n_users: int, spec: SignalSpec) -> np.ndarray:
    base = spec.unreliable_share
    c = spec.user_concentration
    draws = rng.beta(base * c, (1.0 - base) * c, size=n_users)
    return (1.0 - spec.strength) * base + spec.strength * draws


def synthesize_corpus(n: int, seed: int = 0, signal_spec: Optional[SignalSpec] = None) -> list[RawRecord]:
    """Labeled synthetic posts whose label depends on text markers, the
    posting user and engagement counts, in proportions set by ``signal_spec``."""
    if n <= 0:
        raise ValueError("n must be positive")
    spec = signal_spec or SignalSpec()
    s = float(spec.strength)
    rng = np.random.default_rng(seed)

    n_users = max(1, int(round(n / spec.posts_per_user)))
    user_weights = 1.0 / np.arange(1, n_users + 1) ** 0.6
    user_weights /= user_weights.sum()
    propensity = _user_propensities(rng, n_users, spec)

    start = int(datetime(2019, 6, 1, tzinfo=timezone.utc).timestamp())
    span = int(datetime(2020, 12, 1, tzinfo=timezone.utc).timestamp()) - start

    records = []
    for i in range(n):
        u = int(rng.choice(n_users, p=user_weights))
        label = int(rng.random() < propensity[u])
        unrel = s * label
        rel = s * (1 - label)

        n_words = int(rng.integers(spec.text_words[0], spec.text_words[1] + 1))
        words = list(rng.choice(_FILLER, size=n_words))
        base_rate = spec.marker_rate * 0.07
        for _ in range(int(rng.poisson(base_rate + spec.marker_rate * unrel))):
            words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(_UNRELIABLE_MARKERS)))
        for _ in range(int(rng.poisson(base_rate + spec.marker_rate * 0.5 * rel))):
            words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(_RELIABLE_MARKERS)))
        if rng.random() < 0.3:
            template = _DECORATIONS[int(rng.integers(len(_DECORATIONS)))]
            words.append(
                template.format(
                    user=f"user{u}",
                    n=int(rng.integers(0, 10**8)),
                    d=int(rng.integers(1, 29)),
                    m=int(rng.integers(1, 13)),
                    h=int(rng.integers(0, 24)),
                    mm=int(rng.integers(0, 60)),
                )
            )
        text = " ".join(words)

        # Unreliable posts draw more shares, fewer comments and skew to late hours.
        e = spec.engagement_shift
        likes = int(rng.negative_binomial(2, 1.0 / (1.0 + 40.0 * (1.0 + 1.0 * e * unrel))))
        comments = int(rng.negative_binomial(2, 1.0 / (1.0 + 10.0 * (1.0 + 1.5 * e * rel))))
        shares = int(rng.negative_binomial(2, 1.0 / (1.0 + 3.0 * (1.0 + 5.0 * e * unrel))))
        ts = start + int(rng.integers(0, span))
        if rng.random() < 0.5 * e * unrel:
            ts = ts - ts % 86400 + int(rng.integers(20, 24)) * 3600 + int(rng.integers(0, 3600))

        refs = ()
        if rng.random() < spec.image_rate * (1.0 + 0.8 * unrel):
            k = int(rng.integers(1, 4))
            refs = tuple(
                f"img/{i}_{j}_{int(rng.choice([600, 800, 1024, 1280]))}x{int(rng.choice([600, 720, 768, 1024]))}.jpg"
                for j in range(k)
            )

        miss = lambda: rng.random() < spec.missing_rate
        records.append(
            RawRecord(
                id=f"p{seed}_{i:06d}",
                user_id=f"u{u:05d}",
                text=None if miss() else text,
                timestamp=None if miss() else ts,
                likes=None if miss() else likes,
                comments=None if miss() else comments,
                shares=None if miss() else shares,
                image_refs=refs,
                label=label,
            )
        )
    return records


def records_to_json(records: Iterable) -> list[dict]:
    return [asdict(r) for r in records]


def with_label(rec, label):
    return replace(rec, label=label)
