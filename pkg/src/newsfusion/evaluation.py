"""ROC-AUC estimation and comparison reports."""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

# Reported ReINTEL results, kept alongside our numbers for comparison.
REFERENCE_AUC = {
    "meta_only": 0.7338,
    "text_only": 0.9628,
    "S1": 0.9058,
    "S2": 0.9399,
    "S3": 0.9552,
    "S4": 0.9628,
    "blocks_1-6": 0.913251,
    "blocks_6-12": 0.937330,
    "blocks_9-12": 0.921147,
    "blocks_1-12": 0.939915,
    "blocks_1-12_ensemble": 0.941811,
}
REFERENCE_META_ZOO = {
    "logistic_regression": 0.545037,
    "lda": 0.545037,
    "knn": 0.633251,
    "decision_tree": 0.657217,
    "gaussian_nb": 0.588978,
    "svm": 0.599256,
    "adaboost": 0.673511,
    "gradient_boosting": 0.733850,
    "random_forest": 0.727192,
    "extra_trees": 0.651323,
    "mlp": 0.604653,
}


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class ScoredPredictions:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = np.asarray(self.labels).ravel().astype(np.int64)
        if scores.shape != labels.shape:
            raise ValueError(f"{scores.size} scores vs {labels.size} labels")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n_pos(self) -> int:
        return int(self.labels.sum())

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - self.labels.sum())

    def check_defined(self):
        if self.n_pos == 0 or self.n_neg == 0:
            raise UndefinedMetricError(
                f"ROC-AUC needs both classes (got {self.n_pos} positive, {self.n_neg} negative)"
            )


def _as_predictions(scores, labels=None) -> ScoredPredictions:
    if isinstance(scores, ScoredPredictions):
        return scores
    return ScoredPredictions(scores, labels)


def roc_auc(scores, labels=None) -> float:
    """Mann-Whitney estimate of P(s+ > s-) + 0.5 P(s+ = s-).

    Accepts a :class:`ScoredPredictions` or parallel ``scores, labels``.
    """
    p = _as_predictions(scores, labels)
    p.check_defined()
    ranks = rankdata(p.scores)  # average ranks give ties half credit
    n_pos, n_neg = p.n_pos, p.n_neg
    u = ranks[p.labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pairwise_oracle(scores, labels=None) -> float:
    p = _as_predictions(scores, labels)
    p.check_defined()
    pos = [s for s, y in zip(p.scores.tolist(), p.labels.tolist()) if y == 1]
    neg = [s for s, y in zip(p.scores.tolist(), p.labels.tolist()) if y == 0]
    credit = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                credit += 1.0
            elif sp == sn:
                credit += 0.5
    return credit / (len(pos) * len(neg))


def tied_pairs(p: ScoredPredictions) -> int:
    pos_vals, pos_counts = np.unique(p.scores[p.labels == 1], return_counts=True)
    neg_vals, neg_counts = np.unique(p.scores[p.labels == 0], return_counts=True)
    _, i, j = np.intersect1d(pos_vals, neg_vals, return_indices=True)
    return int((pos_counts[i] * neg_counts[j]).sum())


def fingerprint(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class MetricsReport:
    name: str
    auc: float
    n_pos: int
    n_neg: int
    tie_count: int
    fingerprint: str
    reference: Optional[float] = None


def report(
    results: Mapping[str, ScoredPredictions],
    configs: Optional[Mapping[str, dict]] = None,
    references: Optional[Mapping[str, float]] = None,
) -> list[MetricsReport]:
    """One row per named result set, sorted by AUC descending."""
    configs = configs or {}
    references = REFERENCE_AUC if references is None else references
    rows = []
    for name, preds in results.items():
        rows.append(
            MetricsReport(
                name=name,
                auc=roc_auc(preds),
                n_pos=preds.n_pos,
                n_neg=preds.n_neg,
                tie_count=tied_pairs(preds),
                fingerprint=fingerprint(configs.get(name, {})),
                reference=references.get(name),
            )
        )
    rows.sort(key=lambda r: r.auc, reverse=True)
    return rows


def format_table(rows: Sequence[MetricsReport]) -> str:
    header = ("name", "roc_auc", "reference", "n_pos", "n_neg", "ties", "config")
    body = [
        (
            r.name,
            f"{r.auc:.6f}",
            "-" if r.reference is None else f"{r.reference:.6f}",
            str(r.n_pos),
            str(r.n_neg),
            str(r.tie_count),
            r.fingerprint,
        )
        for r in rows
    ]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    line = lambda row: "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
    return "\n".join([line(header), "  ".join("-" * w for w in widths), *map(line, body)])


def report_to_json(rows: Sequence[MetricsReport]) -> list[dict]:
    return [asdict(r) for r in rows]


def read_scores_csv(path: str, column: str) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["id"]: float(row[column]) for row in csv.DictReader(fh)}


def write_scores_csv(path: str, ids: Sequence[str], values, column: str = "score") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", column])
        for i, v in zip(ids, values):
            writer.writerow([i, repr(float(v)) if column == "score" else int(v)])


def evaluate_files(predictions_csv: str, labels_csv: str) -> MetricsReport:
    """Join a predictions CSV (id, score) with a labels CSV (id, label)."""
    scores = read_scores_csv(predictions_csv, "score")
    labels = read_scores_csv(labels_csv, "label")
    missing = sorted(set(labels) - set(scores))
    if missing:
        raise ValueError(f"{len(missing)} labeled ids have no prediction, e.g. {missing[:3]}")
    ids = sorted(labels)
    preds = ScoredPredictions([scores[i] for i in ids], [int(labels[i]) for i in ids])
    return report({"predictions": preds}, references={})[0]
