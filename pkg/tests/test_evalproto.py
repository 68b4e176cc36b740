"""Verification accuracy, threshold selection, fairness, and pair drawing."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import threshold_accuracy_oracle

from facemix.corpus import SynthConfig, synth_corpus
from facemix.distributions import RACES, Race
from facemix.embednet import ArcFace, init_model
from facemix.evalproto import (
    REPORT_COLUMNS,
    Pair,
    PairSet,
    cosine_similarity,
    evaluate,
    fairness_report,
    make_pairs,
    pair_accuracy,
    read_pairs,
    read_report_csv,
    report_row,
    write_pairs,
    write_report_csv,
)


def _instance(seed):
    rng = np.random.default_rng(seed)
    folds = int(rng.choice([2, 4, 5, 10]))
    per_fold = int(rng.integers(2, 200 // folds + 1))
    n = folds * per_fold
    scores = rng.normal(size=n)
    if rng.random() < 0.5:
        scores = np.round(scores, 1)  # force ties and repeated values
    labels = rng.random(n) < 0.5
    return scores, labels, folds


def test_pair_accuracy_matches_brute_force():
    for seed in range(50):
        scores, labels, folds = _instance(seed)
        fold_ids = np.repeat(np.arange(folds), len(scores) // folds)
        got, _ = pair_accuracy(scores, labels, folds)
        want = threshold_accuracy_oracle(scores, labels, fold_ids)
        assert got == pytest.approx(want, abs=1e-12), f"seed {seed}"


def test_pair_accuracy_with_explicit_folds_matches_brute_force():
    rng = np.random.default_rng(7)
    scores = rng.normal(size=60)
    labels = rng.random(60) < 0.5
    fold_ids = rng.permutation(np.repeat(np.arange(3), 20))
    got, _ = pair_accuracy(scores, labels, folds=3, fold_ids=fold_ids)
    want = threshold_accuracy_oracle(scores, labels, fold_ids)
    assert got == pytest.approx(want, abs=1e-12)


def test_threshold_is_the_lowest_maximizing_score():
    scores = np.array([0.0, 1.0, 2.0, 3.0, 0.0, 1.0, 2.0, 3.0])
    labels = np.array([False, False, True, True] * 2)
    acc, thresholds = pair_accuracy(scores, labels, folds=2)
    assert acc == 100.0
    # each training half is (0,1,2,3) with (F,F,T,T): only t = 2 is perfect,
    # and it is the score itself, not the 1.5 midpoint
    assert thresholds == [2.0, 2.0]


def test_degenerate_thresholds_are_sentinels():
    scores = np.array([1.0, 2.0, 3.0, 4.0])
    acc, thresholds = pair_accuracy(scores, np.array([True] * 4), folds=2)
    assert acc == 100.0
    assert thresholds == [-np.inf, -np.inf]  # accept everything
    acc, thresholds = pair_accuracy(scores, np.array([False] * 4), folds=2)
    assert acc == 100.0
    assert thresholds == [np.inf, np.inf]  # reject everything


def test_perfect_separation_scores_100():
    scores = np.array([0.9] * 20 + [0.1] * 20)
    labels = np.array([True] * 20 + [False] * 20)
    order = np.random.default_rng(0).permutation(40)
    acc, _ = pair_accuracy(scores[order], labels[order], folds=4)
    assert acc == 100.0


def test_identical_scores_give_chance_on_balanced_pairs():
    scores = np.zeros(40)
    labels = np.tile([True, False], 20)
    acc, _ = pair_accuracy(scores, labels, folds=4)
    assert acc == 50.0


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_accuracy_is_invariant_to_increasing_transforms(seed):
    rng = np.random.default_rng(seed)
    scores = rng.uniform(-3, 3, size=40)
    labels = rng.random(40) < 0.5
    base, _ = pair_accuracy(scores, labels, folds=4)
    for transform in (lambda s: 3.0 * s + 2.0, np.exp, lambda s: s**3):
        acc, _ = pair_accuracy(transform(scores), labels, folds=4)
        assert acc == pytest.approx(base, abs=1e-12)


def test_duplicating_pairs_within_folds_changes_nothing():
    rng = np.random.default_rng(21)
    scores = rng.normal(size=40)
    labels = rng.random(40) < 0.5
    fold_ids = np.repeat(np.arange(4), 10)
    base, _ = pair_accuracy(scores, labels, 4, fold_ids)
    doubled, _ = pair_accuracy(
        np.concatenate([scores, scores]),
        np.concatenate([labels, labels]),
        4,
        np.concatenate([fold_ids, fold_ids]),
    )
    assert doubled == pytest.approx(base, abs=1e-12)


def test_pair_accuracy_validation():
    scores = np.zeros(10)
    labels = np.zeros(10, dtype=bool)
    with pytest.raises(ValueError, match="align"):
        pair_accuracy(scores, labels[:-1])
    with pytest.raises(ValueError, match="at least 2"):
        pair_accuracy(scores, labels, folds=1)
    with pytest.raises(ValueError, match="not divisible"):
        pair_accuracy(scores, labels, folds=3)
    with pytest.raises(ValueError, match="out of range"):
        pair_accuracy(scores, labels, folds=2, fold_ids=np.full(10, 5))
    with pytest.raises(ValueError, match="empty"):
        pair_accuracy(scores, labels, folds=3, fold_ids=np.zeros(10, dtype=int))


def test_fairness_worked_examples():
    a = fairness_report([71.68, 71.70, 80.68, 75.25])
    assert a.mean == pytest.approx(74.83, abs=0.01)
    assert a.variance == pytest.approx(13.53, abs=0.01)
    b = fairness_report([78.92, 71.05, 77.28, 76.65])
    assert b.mean == pytest.approx(75.97, abs=0.01)
    assert b.variance == pytest.approx(8.77, abs=0.01)
    assert b.per_race[Race.ASIAN] == 71.05


@given(st.lists(st.floats(0, 100), min_size=4, max_size=4))
@settings(max_examples=100, deadline=None)
def test_fairness_variance_is_population_variance(values):
    report = fairness_report(values)
    assert report.mean == pytest.approx(np.mean(values), abs=1e-9)
    assert report.variance == pytest.approx(np.var(values), abs=1e-9)


def test_fairness_validation():
    with pytest.raises(ValueError, match="one accuracy per race"):
        fairness_report([1.0, 2.0, 3.0])
    with pytest.raises(ValueError, match="finite"):
        fairness_report([1.0, 2.0, 3.0, float("nan")])


def test_cosine_similarity():
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 1]) == pytest.approx(1.0)
    assert cosine_similarity([1, 0], [-1, 0]) == pytest.approx(-1.0)
    assert cosine_similarity([2, 3], [20, 30]) == pytest.approx(1.0)
    assert cosine_similarity([1, 2], [3, 4]) == pytest.approx(
        cosine_similarity([10, 20], [3, 4]), abs=1e-12
    )
    with pytest.raises(ValueError, match="zero vector"):
        cosine_similarity([0, 0], [1, 0])


def _pair_catalog():
    cfg = SynthConfig(dim=8, subjects_per_race=12, images_per_subject=4, seed=3)
    return synth_corpus(cfg)


def test_make_pairs_structure():
    records, _ = _pair_catalog()
    pairs = make_pairs(records, per_race=40, folds=5, seed=1)
    by_subject = {r.image_id: r.subject_id for r in records}
    for race in RACES:
        plist = pairs.pairs[race]
        assert len(plist) == 40
        seen = set()
        for p in plist:
            key = (min(p.image_a, p.image_b), max(p.image_a, p.image_b))
            assert key not in seen
            seen.add(key)
            assert p.image_a != p.image_b
            same = by_subject[p.image_a] == by_subject[p.image_b]
            assert same == p.is_match
        # each contiguous fold block is itself balanced
        for f in range(5):
            block = plist[f * 8 : (f + 1) * 8]
            assert sum(p.is_match for p in block) == 4


def test_make_pairs_determinism():
    records, _ = _pair_catalog()
    a = make_pairs(records, per_race=40, folds=5, seed=1)
    b = make_pairs(records, per_race=40, folds=5, seed=1)
    c = make_pairs(records, per_race=40, folds=5, seed=2)
    assert a == b
    assert a != c


def test_make_pairs_validation():
    records, _ = _pair_catalog()
    with pytest.raises(ValueError, match="divisible"):
        make_pairs(records, per_race=41, folds=5)
    lonely = [r for r in records if r.subject_id.endswith("00000")]
    with pytest.raises(ValueError, match="too few subjects"):
        make_pairs(lonely, per_race=20, folds=2)


def test_pairs_round_trip(tmp_path):
    records, _ = _pair_catalog()
    pairs = make_pairs(records, per_race=20, folds=2, seed=4)
    path = tmp_path / "pairs.csv"
    write_pairs(pairs, path)
    assert read_pairs(path, folds=2) == pairs

    explicit = PairSet(
        {
            race: tuple(
                Pair(p.image_a, p.image_b, p.is_match, fold=i % 2)
                for i, p in enumerate(pairs.pairs[race])
            )
            for race in RACES
        },
        folds=2,
    )
    write_pairs(explicit, path)
    assert read_pairs(path, folds=2) == explicit


def test_pair_set_validation():
    pair = Pair("a", "b", True)
    anti = Pair("c", "d", False)
    with pytest.raises(ValueError, match="at least 2 folds"):
        PairSet({Race.AFRICAN: (pair, anti)}, folds=1)
    with pytest.raises(ValueError, match="not divisible"):
        PairSet({Race.AFRICAN: (pair, anti)}, folds=4)
    with pytest.raises(ValueError, match="matches"):
        PairSet({Race.AFRICAN: (pair, Pair("c", "d", True))}, folds=2)
    with pytest.raises(ValueError, match="mixed"):
        PairSet({Race.AFRICAN: (Pair("a", "b", True, fold=0), anti)}, folds=2)
    with pytest.raises(ValueError, match="out of range"):
        PairSet(
            {Race.AFRICAN: (Pair("a", "b", True, fold=7), Pair("c", "d", False, fold=0))},
            folds=2,
        )


def test_evaluate_end_to_end():
    records, store = _pair_catalog()
    pairs = make_pairs(records, per_race=20, folds=2, seed=0)
    model = init_model(store.dim, 12, head=ArcFace(), seed=0)
    report = evaluate(model, store, pairs, metadata={"tag": "smoke"})
    assert set(report.per_race) == set(RACES)
    for acc in report.per_race.values():
        assert 0.0 <= acc <= 100.0
    assert report.metadata == {"tag": "smoke"}
    assert report.mean == pytest.approx(np.mean(list(report.per_race.values())))

    missing = PairSet({Race.AFRICAN: pairs.pairs[Race.AFRICAN]}, folds=2)
    with pytest.raises(ValueError, match="no pairs"):
        evaluate(model, store, missing)


def test_report_row_and_csv(tmp_path):
    from facemix.distributions import SubjectCounts

    report = fairness_report([71.68, 71.70, 80.68, 75.25])
    row = report_row(SubjectCounts((10, 20, 30, 40)), report)
    assert list(row) == list(REPORT_COLUMNS)
    assert row["african_subj"] == "10"
    assert row["acc_asi"] == "71.700000"
    assert row["acc_mean"] == f"{report.mean:.6f}"

    path = tmp_path / "report.csv"
    write_report_csv([row], path)
    assert read_report_csv(path) == [row]
