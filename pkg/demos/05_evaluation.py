"""The rank-based AUC, its pairwise definition, and k-fold estimates."""

import numpy as np

from newsfusion.dataset import synthesize_corpus
from newsfusion.evaluation import auc_pairwise_oracle, roc_auc
from newsfusion.pipeline import ConstantPipeline, TabularPipeline
from newsfusion.training import cross_validate, label_smoothing_ce

rng = np.random.default_rng(5)
y = rng.integers(0, 2, 300)
s = np.round(rng.normal(y, 1.0), 1)  # rounding creates ties
print("rank estimator", roc_auc(s, y), "pairwise count", auc_pairwise_oracle(s, y))
print("after a monotone transform", roc_auc(np.exp(s), y))

# smoothed targets (0.925, 0.075) against a 0.9 / 0.1 prediction
import torch
print("smoothed loss", round(label_smoothing_ce(torch.log(torch.tensor([[0.9, 0.1]])), [0], 0.15).item(), 5))

corpus = synthesize_corpus(1000, seed=5)
for name, pipe in (("constant", ConstantPipeline()), ("gradient boosting", TabularPipeline("gradient_boosting"))):
    cv = cross_validate(pipe, corpus, k=10, seed=5)
    print(f"{name:18s} 10-fold AUC {cv.mean:.4f} +/- {cv.std:.4f}")
