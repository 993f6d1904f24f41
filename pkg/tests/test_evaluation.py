import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsfusion.evaluation import (
    REFERENCE_AUC,
    ScoredPredictions,
    UndefinedMetricError,
    auc_pairwise_oracle,
    evaluate_files,
    format_table,
    report,
    roc_auc,
    tied_pairs,
    write_scores_csv,
)


def test_perfect_separation():
    assert roc_auc([0.9, 0.1], [1, 0]) == 1.0


def test_all_ties_is_half():
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_worked_example():
    # pairs (pos, neg): (0.35,0.1) ok, (0.35,0.4) wrong, (0.8,0.1) ok, (0.8,0.4) ok
    scores, labels = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    assert auc_pairwise_oracle(scores, labels) == 0.75
    assert roc_auc(scores, labels) == 0.75


@pytest.mark.parametrize("labels", [[1, 1, 1], [0, 0]])
def test_single_class_is_undefined(labels):
    with pytest.raises(UndefinedMetricError):
        roc_auc(np.arange(len(labels)), labels)
    with pytest.raises(UndefinedMetricError):
        auc_pairwise_oracle(np.arange(len(labels)), labels)


def test_length_mismatch():
    with pytest.raises(ValueError):
        ScoredPredictions([0.1, 0.2], [1])


@st.composite
def scored(draw, max_n=60):
    n = draw(st.integers(2, max_n))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda l: 0 < sum(l) < len(l)))
    # small integer grid gives plenty of ties
    scores = draw(st.lists(st.integers(-5, 5), min_size=n, max_size=n))
    return np.array(scores, dtype=float), np.array(labels)


@given(scored())
def test_estimator_matches_oracle(case):
    s, y = case
    assert abs(roc_auc(s, y) - auc_pairwise_oracle(s, y)) <= 1e-12


@given(scored())
def test_negation_sums_to_one(case):
    s, y = case
    assert roc_auc(s, y) + roc_auc(-s, y) == pytest.approx(1.0, abs=1e-12)


@given(scored())
@settings(max_examples=50)
def test_monotone_transform_invariance(case):
    s, y = case
    base = roc_auc(s, y)
    for f in (np.exp, lambda x: 3.0 * x + 7.0, lambda x: x**3):
        assert roc_auc(f(s), y) == base


def test_random_scores_average_half():
    rng = np.random.default_rng(0)
    vals = []
    for _ in range(100):
        y = rng.integers(0, 2, 200)
        vals.append(auc_pairwise_oracle(rng.random(200), y))
    assert abs(np.mean(vals) - 0.5) < 0.05


def test_tied_pairs_counts_cross_class_ties():
    p = ScoredPredictions([1, 1, 2, 1, 2], [1, 1, 1, 0, 0])
    # score 1: 2 pos x 1 neg, score 2: 1 pos x 1 neg
    assert tied_pairs(p) == 3


def test_report_sorted_descending_with_references():
    good = ScoredPredictions([0.1, 0.9, 0.8, 0.2], [0, 1, 1, 0])
    weak = ScoredPredictions([0.5, 0.4, 0.6, 0.3], [0, 1, 1, 0])
    rows = report({"S1": weak, "S4": good})
    assert [r.name for r in rows] == ["S4", "S1"]
    assert rows[0].reference == 0.9628 and rows[1].reference == 0.9058
    assert "S4" in format_table(rows).splitlines()[2]


def test_reference_values():
    assert REFERENCE_AUC["text_only"] - REFERENCE_AUC["meta_only"] > 0.20
    order = [REFERENCE_AUC[s] for s in ("S1", "S2", "S3", "S4")]
    assert order == sorted(order)


def test_evaluate_files(tmp_path):
    write_scores_csv(tmp_path / "p.csv", ["a", "b", "c"], [0.9, 0.1, 0.5])
    write_scores_csv(tmp_path / "l.csv", ["a", "b", "c"], [1, 0, 0], column="label")
    row = evaluate_files(str(tmp_path / "p.csv"), str(tmp_path / "l.csv"))
    assert row.auc == 1.0 and row.n_pos == 1 and row.n_neg == 2
