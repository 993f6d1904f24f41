import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from newsfusion.dataset import (
    DEFAULT_SCHEMA,
    ConfigurationError,
    FoldPlan,
    RawRecord,
    SchemaError,
    SignalSpec,
    drop_invalid,
    fill_missing,
    load_corpus,
    make_folds,
    synthesize_corpus,
    timestamp_floor,
    write_corpus,
)

HEADER = "id,user_name,post_message,timestamp_post,num_like_post,num_comment_post,num_share_post,image_links,label\n"


def _write(tmp_path, body, name="c.csv"):
    path = tmp_path / name
    path.write_text(HEADER + body, encoding="utf-8")
    return str(path)


def test_load_preserves_order(tmp_path):
    path = _write(
        tmp_path,
        'b,u1,"xin chào, bạn",1584000000,3,1,0,,0\n'
        "a,u2,hello,1584000100,,2,1,\"['x_800x600.jpg']\",1\n"
        "c,u1,,,0,0,0,,\n",
    )
    recs = load_corpus(path)
    assert [r.id for r in recs] == ["b", "a", "c"]
    assert recs[0].text == "xin chào, bạn"
    assert recs[1].likes is None and recs[1].image_refs == ("x_800x600.jpg",)
    assert recs[2].timestamp is None and recs[2].text is None and recs[2].label is None


def test_unparseable_cells_become_missing(tmp_path):
    recs = load_corpus(_write(tmp_path, "a,u,t,notatime,lots,1.5,2,,0\n"))
    assert recs[0].timestamp is None and recs[0].likes is None and recs[0].comments is None
    assert recs[0].shares == 2


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_corpus("/nonexistent/corpus.csv")


def test_missing_column_named(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("id,user_name,post_message\nx,u,t\n", encoding="utf-8")
    with pytest.raises(SchemaError, match="timestamp_post"):
        load_corpus(str(path))


def test_custom_schema_and_tsv(tmp_path):
    path = tmp_path / "c.tsv"
    path.write_text("pid\tauthor\tbody\tts\tl\tc\ts\ty\np1\tu\thi\t5\t1\t2\t3\t1\n", encoding="utf-8")
    schema = {"id": "pid", "user_id": "author", "text": "body", "timestamp": "ts", "likes": "l", "comments": "c", "shares": "s", "label": "y"}
    (rec,) = load_corpus(str(path), schema)
    assert (rec.id, rec.user_id, rec.timestamp, rec.likes, rec.label) == ("p1", "u", 5, 1, 1)


def test_drop_invalid_reasons():
    recs = [
        RawRecord("a", label=0),
        RawRecord("b", label=2),
        RawRecord("c", likes=-3, label=1),
        RawRecord("", label=0),
        RawRecord("d"),
    ]
    kept, report = drop_invalid(recs)
    assert [r.id for r in kept] == ["a", "d"]
    assert report == [
        {"id": "b", "reason": "invalid label"},
        {"id": "c", "reason": "negative count"},
        {"id": "", "reason": "empty id"},
    ]


def test_drop_invalid_identity_and_idempotent():
    recs = synthesize_corpus(50, seed=1)
    kept, report = drop_invalid(recs)
    assert kept == recs and report == []
    dirty = recs[:5] + [RawRecord("z", label=7)]
    once, _ = drop_invalid(dirty)
    twice, rep2 = drop_invalid(once)
    assert once == twice and rep2 == []


def test_fill_missing_policy():
    rec = RawRecord("a", user_id="u", text=None, timestamp=None, likes=None, comments=4, shares=None, label=1)
    (clean,) = fill_missing([rec], 1577836800)
    assert clean.likes == 0 and clean.shares == 0 and clean.comments == 4
    assert clean.timestamp == 1577836800 and clean.text == ""


def test_fill_missing_leaves_present_values():
    rec = RawRecord("a", "u", "t", 99, 1, 2, 3, ("i",), 0)
    (clean,) = fill_missing([rec], 5)
    assert (clean.text, clean.timestamp, clean.likes, clean.comments, clean.shares, clean.image_refs) == ("t", 99, 1, 2, 3, ("i",))


def test_fill_missing_idempotent():
    recs = synthesize_corpus(200, seed=3, signal_spec=SignalSpec(missing_rate=0.3))
    floor = timestamp_floor(recs)
    once = fill_missing(recs, floor)
    assert fill_missing(once, floor) == once
    assert all(r.timestamp >= floor for r in once)


def test_timestamp_floor_undefined():
    with pytest.raises(ConfigurationError):
        timestamp_floor([RawRecord("a"), RawRecord("b")])
    with pytest.raises(ConfigurationError):
        fill_missing([RawRecord("a")], None)


def test_folds_on_full_corpus_size():
    recs = [RawRecord(str(i), label=int(i < 934)) for i in range(5172)]
    plan = make_folds(recs, k=10, seed=0)
    sizes = sorted(plan.fold_sizes())
    # 5172 = 10 * 517 + 2
    assert sizes == [517] * 8 + [518] * 2


def test_folds_tiny_stratified():
    recs = [RawRecord("a", label=1), RawRecord("b", label=1), RawRecord("c", label=0), RawRecord("d", label=0)]
    plan = make_folds(recs, k=2, seed=5)
    for f in range(2):
        labels = sorted(recs[i].label for i in plan.test_indices(f))
        assert labels == [0, 1]


def test_folds_deterministic_and_errors():
    recs = synthesize_corpus(100, seed=0)
    a, b = make_folds(recs, 10, seed=4), make_folds(recs, 10, seed=4)
    assert np.array_equal(a.assignments, b.assignments)
    with pytest.raises(ValueError):
        make_folds(recs[:5], k=6)
    with pytest.raises(ValueError):
        make_folds(recs, k=1)


def check_fold_invariants(labels, plan):
    n = len(labels)
    assert plan.assignments.shape == (n,)
    assert set(np.unique(plan.assignments)) <= set(range(plan.k))
    sizes = plan.fold_sizes()
    assert sizes.sum() == n and sizes.max() - sizes.min() <= 1
    if plan.stratified:
        n_pos = int(np.sum(labels))
        for f in range(plan.k):
            pos_f = int(np.sum(labels[plan.assignments == f]))
            assert abs(pos_f - n_pos * sizes[f] / n) <= 1.0


@given(st.integers(20, 400), st.integers(2, 12), st.floats(0.05, 0.95), st.integers(0, 10**6))
def test_fold_invariants_property(n, k, share, seed):
    rng = np.random.default_rng(seed)
    labels = (rng.random(n) < share).astype(int)
    recs = [RawRecord(str(i), label=int(l)) for i, l in enumerate(labels)]
    check_fold_invariants(labels, make_folds(recs, k, seed=seed))
    check_fold_invariants(labels, make_folds(recs, k, seed=seed, stratified=False))


def test_foldplan_json_roundtrip():
    plan = make_folds(synthesize_corpus(30, seed=0), 3, seed=9)
    again = FoldPlan.from_json(json.loads(json.dumps(plan.to_json())))
    assert np.array_equal(again.assignments, plan.assignments) and again.seed == 9 and again.k == 3


def test_synth_class_ratio():
    recs = synthesize_corpus(1000, seed=11)
    unreliable = sum(r.label for r in recs)
    # default share 934/5172 = 0.1806; binomial sd ~ 12, user clustering widens it
    assert 110 <= unreliable <= 260
    assert len({r.id for r in recs}) == 1000


def test_synth_deterministic_bytes(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    write_corpus(synthesize_corpus(300, seed=2), str(a))
    write_corpus(synthesize_corpus(300, seed=2), str(b))
    assert a.read_bytes() == b.read_bytes()


def test_write_load_roundtrip(tmp_path):
    recs = synthesize_corpus(120, seed=4)
    path = tmp_path / "r.csv"
    write_corpus(recs, str(path))
    again = load_corpus(str(path), DEFAULT_SCHEMA)
    assert again == recs
