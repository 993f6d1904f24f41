"""Metadata-only classifiers: the classical learner zoo, stacking, blending
and the differentiable MLP reused as the fusion meta submodel."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

import joblib
import numpy as np
import torch
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, clone
from sklearn.discriminant_analysis import LinearDiscriminantAnalysis
from sklearn.ensemble import (
    AdaBoostClassifier,
    ExtraTreesClassifier,
    GradientBoostingClassifier,
    RandomForestClassifier,
)
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold, train_test_split
from sklearn.naive_bayes import GaussianNB
from sklearn.neighbors import KNeighborsClassifier
from sklearn.svm import SVC
from sklearn.tree import DecisionTreeClassifier
from torch import nn

from .features import D_META

LEARNER_KINDS = (
    "logistic_regression",
    "lda",
    "knn",
    "decision_tree",
    "gaussian_nb",
    "svm",
    "adaboost",
    "gradient_boosting",
    "random_forest",
    "extra_trees",
    "mlp",
)
DEFAULT_ENSEMBLE_BASES = ("gradient_boosting", "random_forest", "adaboost", "extra_trees")

_SKLEARN = {
    "logistic_regression": LogisticRegression,
    "lda": LinearDiscriminantAnalysis,
    "knn": KNeighborsClassifier,
    "decision_tree": DecisionTreeClassifier,
    "gaussian_nb": GaussianNB,
    "svm": SVC,
    "adaboost": AdaBoostClassifier,
    "gradient_boosting": GradientBoostingClassifier,
    "random_forest": RandomForestClassifier,
    "extra_trees": ExtraTreesClassifier,
}


@lru_cache(maxsize=None)
def default_hyperparameters() -> dict:
    raw = resources.files("newsfusion").joinpath("data/tabular_defaults.json").read_text("utf-8")
    return json.loads(raw)


class TabularFitError(RuntimeError):
    def __init__(self, spec, cause):
        super().__init__(f"{spec.kind} fit failed ({cause}); spec={asdict(spec)}")
        self.spec = spec


@dataclass
class BaseLearnerSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}; choose from {LEARNER_KINDS}")

    def resolved(self) -> dict:
        params = dict(default_hyperparameters()[self.kind])
        params.update(self.hyperparameters)
        return params


# ---------------------------------------------------------------------------
# the differentiable MLP


class MetaMLP(nn.Module):
    """``d_in -> 64 -> 32`` ReLU extractor with dropout, plus a ``32 -> 2`` output.

    ``feature_only=True`` builds the extractor alone (the fusion meta submodel).
    """

    def __init__(self, d_in: int = D_META, hidden: Sequence[int] = (64, 32), dropout: float = 0.2, feature_only: bool = False):
        super().__init__()
        layers, prev = [], d_in
        for width in hidden:
            layers += [nn.Linear(prev, width), nn.ReLU(), nn.Dropout(dropout)]
            prev = width
        self.d_in = d_in
        self.feature_dim = prev
        self.extractor = nn.Sequential(*layers)
        self.output = None if feature_only else nn.Linear(prev, 2)

    def feature(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise ValueError(f"MetaMLP expects (n, {self.d_in}) input, got {tuple(x.shape)}")
        return self.extractor(x)

    def forward(self, x):
        feats = self.feature(x)
        return feats, (self.output(feats) if self.output is not None else None)

    def logits(self, batch: dict) -> torch.Tensor:
        return self(batch["meta"])[1]

    def layer_groups(self) -> list:
        return [("head", [n for n, _ in self.named_parameters()])]


def mlp_forward(m: MetaMLP, X):
    """Return ``(features n x 32, logits n x 2)`` as tensors."""
    dtype = next(m.parameters()).dtype
    return m(torch.as_tensor(np.asarray(X), dtype=dtype))


class TorchMLPClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn facade over :class:`MetaMLP` trained with the shared loop."""

    def __init__(self, hidden=(64, 32), dropout=0.2, epochs=30, lr=1e-3, batch_size=32, validation_fraction=0.1, seed=0):
        self.hidden = hidden
        self.dropout = dropout
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.seed = seed

    def fit(self, X, y):
        from .training import OptimizerConfig, train

        X = np.asarray(X, dtype=np.float32)
        y = np.asarray(y, dtype=np.int64)
        self.classes_ = np.array([0, 1])
        torch.manual_seed(self.seed)
        self.model_ = MetaMLP(X.shape[1], tuple(self.hidden), self.dropout)
        val = None
        if self.validation_fraction and min(np.bincount(y, minlength=2)) >= 2:
            tr, va = train_test_split(
                np.arange(len(y)), test_size=self.validation_fraction, stratify=y, random_state=self.seed
            )
            val = ({"meta": torch.from_numpy(X[va])}, y[va])
        else:
            tr = np.arange(len(y))
        cfg = OptimizerConfig(max_lr=self.lr, base_lr=self.lr, epochs=self.epochs, batch_size=self.batch_size, seed=self.seed)
        self.model_, self.history_ = train(self.model_, {"meta": torch.from_numpy(X[tr])}, y[tr], cfg, val=val)
        return self

    def predict_proba(self, X):
        from .textenc import predict_proba

        p1 = predict_proba(self.model_, {"meta": torch.as_tensor(np.asarray(X), dtype=torch.float32)})
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# base learners


def make_estimator(spec: BaseLearnerSpec):
    params = spec.resolved()
    if spec.kind == "mlp":
        return TorchMLPClassifier(seed=spec.seed, **params)
    cls = _SKLEARN[spec.kind]
    if "random_state" in cls().get_params():
        params.setdefault("random_state", spec.seed)
    return cls(**params)


class TabularModel:
    """Fitted metadata classifier; ``predict_proba`` gives the unreliable-class score."""

    def __init__(self, spec, estimator, metrics: Optional[dict] = None):
        self.spec = spec
        self.estimator = estimator
        self.metrics = metrics or {}

    def predict_proba(self, X) -> np.ndarray:
        return np.asarray(self.estimator.predict_proba(np.asarray(X))[:, 1], dtype=np.float64)

    def manifest(self) -> dict:
        spec = self.spec
        return {"spec": asdict(spec) if hasattr(spec, "__dataclass_fields__") else spec, "metrics": self.metrics}

    def save(self, directory: str) -> None:
        os.makedirs(directory, exist_ok=True)
        joblib.dump(self, os.path.join(directory, "model.joblib"))
        with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=2, default=str)

    @staticmethod
    def load(directory: str) -> "TabularModel":
        return joblib.load(os.path.join(directory, "model.joblib"))


def train_base(spec: BaseLearnerSpec, X, y) -> TabularModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    est = make_estimator(spec)
    try:
        est.fit(X, y)
    except Exception as exc:  # surface with the learner spec attached
        raise TabularFitError(spec, exc) from exc
    return TabularModel(spec, est)


# ---------------------------------------------------------------------------
# ensembles


class NewtonLogisticRegression:
    """Unpenalized logistic regression fitted by damped Newton steps.

    Steps use the Hessian pseudo-inverse, so duplicated input columns share
    weight and predictions match the de-duplicated fit. On separable data the
    iteration stops at ``max_iter`` with the ranking intact.
    """

    def __init__(self, max_iter: int = 100, tol: float = 1e-12):
        self.max_iter = max_iter
        self.tol = tol

    @staticmethod
    def _design(Z):
        Z = np.asarray(Z, dtype=np.float64)
        return np.column_stack([np.ones(len(Z)), Z])

    @staticmethod
    def _loglik(X, y, w):
        eta = X @ w
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    def fit(self, Z, y):
        X = self._design(Z)
        y = np.asarray(y, dtype=np.float64)
        w = np.zeros(X.shape[1])
        ll = self._loglik(X, y, w)
        for self.n_iter_ in range(1, self.max_iter + 1):
            p = expit(X @ w)
            grad = X.T @ (y - p)
            if np.max(np.abs(grad)) < self.tol:
                break
            hess = X.T @ (X * (p * (1.0 - p))[:, None])
            step = np.linalg.pinv(hess, rcond=1e-13) @ grad
            t = 1.0
            for _ in range(40):
                cand = w + t * step
                cand_ll = self._loglik(X, y, cand)
                if cand_ll >= ll:
                    break
                t *= 0.5
            else:
                break
            if np.max(np.abs(cand - w)) < 1e-14 * max(1.0, np.max(np.abs(w))):
                w, ll = cand, cand_ll
                break
            w, ll = cand, cand_ll
        self.coef_ = w
        return self

    def predict_proba(self, Z) -> np.ndarray:
        return expit(self._design(Z) @ self.coef_)


@dataclass
class EnsembleConfig:
    mode: str = "stacking"
    base: list = field(default_factory=lambda: [BaseLearnerSpec(k) for k in DEFAULT_ENSEMBLE_BASES])
    meta_learner: str = "logistic_regression"
    stacking_folds: int = 5
    blending_holdout_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("stacking", "blending"):
            raise ValueError(f"unknown ensemble mode {self.mode!r}")
        if self.meta_learner != "logistic_regression":
            raise ValueError("the ensemble meta-learner is logistic regression")
        self.base = [b if isinstance(b, BaseLearnerSpec) else BaseLearnerSpec(**b) for b in self.base]


class StackedModel:
    def __init__(self, cfg, bases, meta, oof_scores, oof_fold, fold_train_indices):
        self.spec = cfg
        self.bases = bases
        self.meta = meta
        self.oof_scores = oof_scores
        self.oof_fold = oof_fold  # fold whose model produced each row's meta-feature
        self.fold_train_indices = fold_train_indices
        self.metrics = {}

    def base_scores(self, X) -> np.ndarray:
        return np.column_stack([b.predict_proba(X) for b in self.bases])

    def predict_proba(self, X) -> np.ndarray:
        return self.meta.predict_proba(self.base_scores(X))

    save = TabularModel.save
    manifest = TabularModel.manifest


def train_stacking(cfg: EnsembleConfig, X, y) -> StackedModel:
    if cfg.mode != "stacking":
        raise ValueError("train_stacking needs mode='stacking'")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(y) < cfg.stacking_folds:
        raise ValueError(f"{len(y)} rows is fewer than stacking_folds={cfg.stacking_folds}")
    skf = StratifiedKFold(n_splits=cfg.stacking_folds, shuffle=True, random_state=cfg.seed)
    oof = np.zeros((len(y), len(cfg.base)))
    oof_fold = np.full(len(y), -1)
    fold_train = []
    for f, (tr, va) in enumerate(skf.split(X, y)):
        fold_train.append(tr)
        oof_fold[va] = f
        for j, spec in enumerate(cfg.base):
            oof[va, j] = train_base(spec, X[tr], y[tr]).predict_proba(X[va])
    meta = NewtonLogisticRegression().fit(oof, y)
    bases = [train_base(spec, X, y) for spec in cfg.base]
    return StackedModel(cfg, bases, meta, oof, oof_fold, fold_train)


class BlendedModel:
    def __init__(self, cfg, bases, meta, base_index, holdout_index):
        self.spec = cfg
        self.bases = bases
        self.meta = meta
        self.base_index = base_index
        self.holdout_index = holdout_index
        self.metrics = {}

    def base_scores(self, X) -> np.ndarray:
        return np.column_stack([b.predict_proba(X) for b in self.bases])

    def predict_proba(self, X) -> np.ndarray:
        return self.meta.predict_proba(self.base_scores(X))

    save = TabularModel.save
    manifest = TabularModel.manifest


def blending_split(y, fraction: float, seed: int) -> tuple:
    """Random holdout split; retried with stratification if the holdout
    comes out single-class."""
    idx = np.arange(len(y))
    tr, ho = train_test_split(idx, test_size=fraction, random_state=seed)
    if len(np.unique(y[ho])) < 2:
        try:
            tr, ho = train_test_split(idx, test_size=fraction, random_state=seed, stratify=y)
        except ValueError as exc:
            raise ValueError(f"blending holdout cannot contain both classes: {exc}") from exc
        if len(np.unique(y[ho])) < 2:
            raise ValueError("blending holdout contains a single class even after stratification")
    return np.sort(tr), np.sort(ho)


def train_blending(cfg: EnsembleConfig, X, y) -> BlendedModel:
    if cfg.mode != "blending":
        raise ValueError("train_blending needs mode='blending'")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    tr, ho = blending_split(y, cfg.blending_holdout_fraction, cfg.seed)
    bases = [train_base(spec, X[tr], y[tr]) for spec in cfg.base]
    hold_scores = np.column_stack([b.predict_proba(X[ho]) for b in bases])
    meta = NewtonLogisticRegression().fit(hold_scores, y[ho])
    return BlendedModel(cfg, bases, meta, tr, ho)
