import numpy as np
import pytest
import torch

from newsfusion.dataset import SignalSpec, synthesize_corpus
from newsfusion.evaluation import roc_auc
from newsfusion.features import D_META, prepare_split
from newsfusion.tabular import (
    LEARNER_KINDS,
    BaseLearnerSpec,
    EnsembleConfig,
    MetaMLP,
    NewtonLogisticRegression,
    TabularFitError,
    TabularModel,
    blending_split,
    mlp_forward,
    train_base,
    train_blending,
    train_stacking,
)


def _toy(n=50, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = (X[:, 0] + 0.8 * rng.normal(size=n) > 0.3).astype(int)
    return X, y


def test_separable_training_auc_one():
    X = np.array([[0.0, 0.0], [0.1, 0.2], [0.2, 0.1], [1.0, 1.0], [1.1, 0.9], [0.9, 1.2]])
    y = np.array([0, 0, 0, 1, 1, 1])
    model = train_base(BaseLearnerSpec("gradient_boosting"), X, y)
    assert roc_auc(model.predict_proba(X), y) == 1.0


@pytest.mark.parametrize("kind", LEARNER_KINDS)
def test_every_learner_fits_and_scores(kind):
    X, y = _toy(80)
    model = train_base(BaseLearnerSpec(kind, {"epochs": 3} if kind == "mlp" else {}), X, y)
    p = model.predict_proba(X)
    assert p.shape == (80,) and np.all((p >= 0) & (p <= 1))


def test_no_signal_heldout_auc_near_half():
    recs = synthesize_corpus(1200, seed=2, signal_spec=SignalSpec(strength=0.0, engagement_shift=0.0, marker_rate=0.0))
    fold = prepare_split(recs[:900], recs[900:])
    model = train_base(BaseLearnerSpec("gradient_boosting"), fold.meta_train.values, fold.y_train)
    assert 0.4 <= roc_auc(model.predict_proba(fold.meta_test.values), fold.y_test) <= 0.6


def test_unknown_kind_and_fit_error():
    with pytest.raises(ValueError):
        BaseLearnerSpec("xgboost")
    with pytest.raises(TabularFitError, match="gradient_boosting"):
        train_base(BaseLearnerSpec("gradient_boosting"), np.zeros((4, 2)), np.zeros(4))


def test_save_load_roundtrip(tmp_path):
    X, y = _toy()
    model = train_base(BaseLearnerSpec("random_forest", {"n_estimators": 10}, seed=3), X, y)
    model.save(str(tmp_path / "rf"))
    again = TabularModel.load(str(tmp_path / "rf"))
    assert np.array_equal(again.predict_proba(X), model.predict_proba(X))
    assert (tmp_path / "rf" / "manifest.json").exists()


# ---------------------------------------------------------------------------
# MetaMLP


def test_mlp_shapes():
    feats, logits = mlp_forward(MetaMLP(D_META), np.zeros((7, D_META)))
    assert feats.shape == (7, 32) and logits.shape == (7, 2)


def test_mlp_eval_deterministic():
    m = MetaMLP(D_META).eval()
    x = np.random.default_rng(0).normal(size=(5, D_META))
    assert torch.equal(mlp_forward(m, x)[1], mlp_forward(m, x)[1])


def test_mlp_zero_weights():
    m = MetaMLP(D_META)
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()
    _, logits = mlp_forward(m, np.ones((3, D_META)))
    assert torch.all(logits == 0)
    assert torch.allclose(torch.softmax(logits, -1), torch.full((3, 2), 0.5))


def test_mlp_feature_only_has_no_output():
    m = MetaMLP(D_META, feature_only=True)
    assert m.output is None and not any(n.startswith("output") for n, _ in m.named_parameters())


def test_mlp_rejects_wrong_width():
    with pytest.raises(ValueError):
        mlp_forward(MetaMLP(D_META), np.zeros((2, 5)))


# ---------------------------------------------------------------------------
# meta-learner


def test_newton_lr_duplicate_columns():
    rng = np.random.default_rng(1)
    z = rng.random((50, 1))
    y = (z[:, 0] + 0.5 * rng.normal(size=50) > 0.5).astype(int)
    single = NewtonLogisticRegression().fit(z, y).predict_proba(z)
    double = NewtonLogisticRegression().fit(np.hstack([z, z]), y).predict_proba(np.hstack([z, z]))
    assert np.max(np.abs(single - double)) <= 1e-9


def test_newton_lr_matches_sklearn_unpenalized():
    from sklearn.linear_model import LogisticRegression

    rng = np.random.default_rng(2)
    Z = rng.normal(size=(200, 3))
    y = (Z @ [1.0, -0.5, 0.2] + rng.logistic(size=200) > 0).astype(int)
    ours = NewtonLogisticRegression().fit(Z, y).predict_proba(Z)
    ref = LogisticRegression(penalty=None, tol=1e-10, max_iter=10000).fit(Z, y).predict_proba(Z)[:, 1]
    assert np.max(np.abs(ours - ref)) < 1e-5


# ---------------------------------------------------------------------------
# stacking and blending


def _small_bases(*kinds):
    return [BaseLearnerSpec(k, {"n_estimators": 20}, seed=0) for k in kinds]


def test_stacking_oof_never_trained_on_row():
    X, y = _toy(60)
    model = train_stacking(EnsembleConfig(base=_small_bases("gradient_boosting", "random_forest")), X, y)
    assert np.all(model.oof_fold >= 0)
    for i in range(len(y)):
        assert i not in set(model.fold_train_indices[model.oof_fold[i]].tolist())
    assert model.oof_scores.shape == (60, 2)


def test_stacking_perfect_base_gives_auc_one():
    X, y = _toy(60)
    X = np.column_stack([X, y * 10.0])
    model = train_stacking(EnsembleConfig(base=[BaseLearnerSpec("decision_tree", {"max_depth": 1})]), X, y)
    assert roc_auc(model.oof_scores[:, 0], y) == 1.0
    assert roc_auc(model.predict_proba(X), y) == 1.0


def test_stacking_duplicate_bases_equal_single():
    X, y = _toy(50)
    one = train_stacking(EnsembleConfig(base=_small_bases("gradient_boosting")), X, y)
    two = train_stacking(EnsembleConfig(base=_small_bases("gradient_boosting", "gradient_boosting")), X, y)
    assert np.max(np.abs(one.predict_proba(X) - two.predict_proba(X))) <= 1e-9


def test_blending_split_sizes():
    y = np.array([0, 1] * 50)
    tr, ho = blending_split(y, 0.2, seed=0)
    assert len(tr) == 80 and len(ho) == 20 and not set(tr) & set(ho)


def test_blending_split_retries_stratified():
    y = np.zeros(100, dtype=int)
    y[:5] = 1
    for seed in range(20):
        _, ho = blending_split(y, 0.2, seed)
        assert len(np.unique(y[ho])) == 2
    with pytest.raises(ValueError):
        blending_split(np.array([0] * 9 + [1]), 0.2, 0)


def test_blending_rows_and_determinism():
    X, y = _toy(100)
    cfg = EnsembleConfig(mode="blending", base=_small_bases("random_forest", "extra_trees"), seed=4)
    a, b = train_blending(cfg, X, y), train_blending(cfg, X, y)
    assert len(a.base_index) == 80 and len(a.holdout_index) == 20
    assert np.array_equal(a.holdout_index, b.holdout_index)
    assert np.array_equal(a.predict_proba(X), b.predict_proba(X))


def test_blending_perfect_holdout():
    X, y = _toy(100)
    X = np.column_stack([X, y * 10.0])
    cfg = EnsembleConfig(mode="blending", base=[BaseLearnerSpec("decision_tree", {"max_depth": 1})])
    model = train_blending(cfg, X, y)
    ho = model.holdout_index
    assert roc_auc(model.predict_proba(X[ho]), y[ho]) == 1.0


def test_ensemble_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(mode="voting")
    with pytest.raises(ValueError):
        train_stacking(EnsembleConfig(mode="blending"), *_toy())
