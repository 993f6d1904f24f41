"""Walk one small corpus from raw records to the standardized metadata matrix."""

import numpy as np

from newsfusion.dataset import SignalSpec, drop_invalid, fill_missing, make_folds, synthesize_corpus, timestamp_floor
from newsfusion.features import META_COLUMNS, decode_timestamp, normalize_text, prepare_split

corpus = synthesize_corpus(400, seed=1, signal_spec=SignalSpec(missing_rate=0.1))
print(len(corpus), "records, unreliable share", np.mean([r.label for r in corpus]).round(3))

# raw posts carry links, emails, markup and legacy tone placement
raw = 'Xem <b>ngay</b> http://vd.vn/a?b=1 hoặc gửi thư tới ban@vd.vn, giá 2.000.000 đ, hòa bình'
print(normalize_text(raw).text)

# missing counts become 0, missing timestamps the earliest training timestamp
kept, dropped = drop_invalid(corpus)
floor = timestamp_floor(kept)
clean = fill_missing(kept, floor)
print("dropped", len(dropped), "floor", floor, decode_timestamp(floor))

# every statistic is fitted on the training portion only
plan = make_folds(corpus, k=5, seed=1)
fold = prepare_split([corpus[i] for i in plan.train_indices(0)], [corpus[i] for i in plan.test_indices(0)])
print("train", fold.meta_train.values.shape, "held-out", fold.meta_test.values.shape)
for name, mu, sd in zip(META_COLUMNS, fold.meta_train.values.mean(0), fold.meta_train.values.std(0)):
    print(f"  {name:18s} mean {mu:+.2f} std {sd:.2f}")
print("user-score table built from", len(fold.provenance["user_scores"]), "training rows")
