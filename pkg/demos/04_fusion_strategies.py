"""Train both submodels once and compare the four fusion initializations.

Takes a few minutes on one CPU; lower N for a quicker look.
"""

from newsfusion.dataset import make_folds, synthesize_corpus
from newsfusion.evaluation import REFERENCE_AUC, ScoredPredictions, format_table, report
from newsfusion.features import prepare_split
from newsfusion.fusion import FusionConfig, StrategyPlan, assemble
from newsfusion.pipeline import StrategySettings, desk_backbone, run_strategies

N = 1000

# what each strategy inherits, before any training
for sid in ("S1", "S2", "S3", "S4"):
    plan = StrategyPlan.for_strategy(sid, text_checkpoint="<text>", meta_checkpoint="<meta>")
    print(sid, plan.text_head_init, plan.meta_init)
model = assemble(StrategyPlan.for_strategy("S1", seed=4), FusionConfig(), desk_backbone(), (1, 2, 3, 4))
print("fused head input", model.fused_head.in_dim, "| meta output layer kept:", any("meta.output" in n for n in model.provenance))

corpus = synthesize_corpus(N, seed=4)
plan = make_folds(corpus, k=5, seed=4)
fold = prepare_split([corpus[i] for i in plan.train_indices(0)], [corpus[i] for i in plan.test_indices(0)])
scores = run_strategies(fold, StrategySettings(seed=4))
rows = report({k: ScoredPredictions(v, fold.y_test) for k, v in scores.items()}, references=REFERENCE_AUC)
print(format_table(rows))
