"""Metadata-only learners, then stacking and blending on top of them."""

from newsfusion.dataset import make_folds, synthesize_corpus
from newsfusion.evaluation import REFERENCE_META_ZOO, roc_auc
from newsfusion.features import prepare_split
from newsfusion.tabular import BaseLearnerSpec, EnsembleConfig, train_base, train_blending, train_stacking

corpus = synthesize_corpus(1000, seed=2)
plan = make_folds(corpus, k=5, seed=2)
fold = prepare_split([corpus[i] for i in plan.train_indices(0)], [corpus[i] for i in plan.test_indices(0)])
X, y, Xt, yt = fold.meta_train.values, fold.y_train, fold.meta_test.values, fold.y_test

for kind, ref in REFERENCE_META_ZOO.items():
    model = train_base(BaseLearnerSpec(kind, seed=2), X, y)
    print(f"{kind:20s} {roc_auc(model.predict_proba(Xt), yt):.4f}   (reported on the real corpus: {ref:.4f})")

stack = train_stacking(EnsembleConfig(mode="stacking", seed=2), X, y)
print("stacking weights", stack.meta.coef_.round(3), "AUC", round(roc_auc(stack.predict_proba(Xt), yt), 4))
blend = train_blending(EnsembleConfig(mode="blending", seed=2), X, y)
print("blending AUC", round(roc_auc(blend.predict_proba(Xt), yt), 4))
