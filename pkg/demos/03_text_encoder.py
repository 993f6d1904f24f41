"""Block-wise [CLS] concatenation and a fine-tuning run with gradual unfreezing."""

import numpy as np

from newsfusion.dataset import synthesize_corpus
from newsfusion.evaluation import roc_auc
from newsfusion.features import normalize_text
from newsfusion.pipeline import desk_backbone, desk_optimizer
from newsfusion.textenc import TextClassifier, build_backbone, concat_cls, encode, parse_blocks, predict_proba
from newsfusion.training import build_param_groups, lr_at, train

# the head width follows the block selection: 12 x 768, 7 x 768, ...
for spec in ("1-12", "6-12", "9-12", "1-6"):
    print(spec, concat_cls(np.zeros((12, 768)), parse_blocks(spec)).shape)

backbone = build_backbone(desk_backbone(seed=0))
out = encode(backbone, ["tin nóng", "theo nguồn chính thức"])
print("per-text CLS stack", out[0].cls_states.shape)

corpus = synthesize_corpus(600, seed=3)
texts = [normalize_text(r.text).text for r in corpus]
y = np.array([r.label for r in corpus])
model = TextClassifier(backbone, parse_blocks("1-4"))
for g in build_param_groups(model, desk_optimizer()):
    print(f"  {g['layer_group']:10s} {g['kind']:8s} lr x{g['lr_mult']:.4f} decay {g['weight_decay']}")

cfg = desk_optimizer(epochs=5)
print("lr at start / peak / end:", lr_at(0, 100, cfg), lr_at(10, 100, cfg), lr_at(100, 100, cfg))
inputs = model.make_inputs(texts[:500])
model, hist = train(model, inputs, y[:500], cfg, val=(model.make_inputs(texts[500:]), y[500:]))
for rec in hist.records:
    print(f"epoch {rec['epoch']} loss {rec['loss']:.4f} val AUC {rec['val_auc']:.4f} trainable {rec['trainable']}")
print("held-out AUC", round(roc_auc(predict_proba(model, model.make_inputs(texts[500:])), y[500:]), 4))
