"""Classification metrics, retrieval Recall@K, and coarse segmentation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nisslkit.contrastive import l2_normalize
from nisslkit.errors import NisslkitError
from nisslkit.evaluation import (
    classify_zero_shot,
    coarse_segmentation,
    multi_label_hit_rate,
    recall_at_k,
    retrieval_table,
    segmentation_agreement,
    weighted_prf,
)
from nisslkit.geometry import BBox
from nisslkit.tiler import TileRecord

from conftest import oracle_prf, oracle_recall_at_k


def unit_rows(rng, n, d):
    return l2_normalize(rng.normal(size=(n, d)))


class TestClassifyZeroShot:
    def test_exact_match_ranks_first_with_score_one(self):
        labels = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])}
        ranked = classify_zero_shot(np.array([1.0, 0.0]), labels)
        assert ranked[0] == ("a", pytest.approx(1.0))

    def test_orthogonal_embedding_ties_break_by_name(self):
        labels = {"zeta": np.array([1.0, 0.0, 0.0]),
                  "alpha": np.array([0.0, 1.0, 0.0])}
        ranked = classify_zero_shot(np.array([0.0, 0.0, 1.0]), labels)
        assert [l for l, _ in ranked] == ["alpha", "zeta"]
        assert all(s == 0.0 for _, s in ranked)

    def test_matches_argsort_oracle(self):
        rng = np.random.default_rng(3)
        emb = unit_rows(rng, 1, 12)[0]
        labels = {f"l{i}": v for i, v in enumerate(unit_rows(rng, 20, 12))}
        ranked = classify_zero_shot(emb, labels)
        scores = {l: float(np.dot(emb, v)) for l, v in labels.items()}
        expected = sorted(scores, key=lambda l: (-scores[l], l))
        assert [l for l, _ in ranked] == expected

    def test_invariant_under_positive_rescaling(self):
        rng = np.random.default_rng(4)
        emb = unit_rows(rng, 1, 8)[0]
        labels = {f"l{i}": v for i, v in enumerate(unit_rows(rng, 10, 8))}
        base = [l for l, _ in classify_zero_shot(emb, labels)]
        scaled = [l for l, _ in classify_zero_shot(emb * 3.7, labels)]
        assert base == scaled

    def test_empty_label_set_rejected(self):
        with pytest.raises(NisslkitError):
            classify_zero_shot(np.array([1.0]), {})


class TestWeightedPRF:
    def test_perfect_predictions(self):
        report = weighted_prf(["a", "b", "a"], ["a", "b", "a"])
        assert report.weighted_precision == 1.0
        assert report.weighted_recall == 1.0
        assert report.weighted_f1 == 1.0

    def test_hand_computed_example(self):
        report = weighted_prf(["A", "B", "B"], ["A", "A", "B"])
        assert report.weighted_f1 == pytest.approx(2 / 3)
        assert report.per_class["A"].precision == pytest.approx(1.0)
        assert report.per_class["A"].recall == pytest.approx(0.5)
        assert report.per_class["B"].precision == pytest.approx(0.5)
        assert report.per_class["B"].recall == pytest.approx(1.0)

    def test_single_wrong_class_prediction(self):
        report = weighted_prf(["B", "B", "B"], ["A", "B", "C"])
        assert report.per_class["A"].recall == 0.0
        assert report.per_class["C"].recall == 0.0
        assert report.per_class["B"].recall == 1.0
        assert report.weighted_recall == pytest.approx(1 / 3)

    def test_class_without_predictions_gets_zero_precision(self):
        report = weighted_prf(["a", "a"], ["a", "b"])
        assert report.per_class["b"].precision == 0.0
        assert report.per_class["b"].f1 == 0.0

    def test_empty_inputs_rejected(self):
        with pytest.raises(NisslkitError):
            weighted_prf([], [])
        with pytest.raises(NisslkitError):
            weighted_prf(["a"], ["a", "b"])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 200), st.integers(1, 10))
    def test_matches_brute_force_oracle(self, seed, n, k):
        rng = np.random.default_rng(seed)
        classes = [f"c{i}" for i in range(k)]
        truths = [classes[i] for i in rng.integers(0, k, n)]
        preds = [classes[i] for i in rng.integers(0, k, n)]
        report = weighted_prf(preds, truths)
        per_class, (wp, wr, wf) = oracle_prf(preds, truths)
        assert report.weighted_precision == pytest.approx(wp, abs=1e-12)
        assert report.weighted_recall == pytest.approx(wr, abs=1e-12)
        assert report.weighted_f1 == pytest.approx(wf, abs=1e-12)
        for cls, (support, p, r, f) in per_class.items():
            stats = report.per_class[cls]
            assert stats.support == support
            assert stats.precision == pytest.approx(p, abs=1e-12)
            assert stats.recall == pytest.approx(r, abs=1e-12)
            assert stats.f1 == pytest.approx(f, abs=1e-12)


class TestMultiLabel:
    def test_single_label_reduces_to_top1(self):
        outcome = multi_label_hit_rate([["a", "b"], ["b", "a"]],
                                       [["a"], ["a"]])
        assert outcome.hits == [True, False]
        assert outcome.effective_predictions == ["a", "b"]

    def test_primary_ranked_third_of_three_is_hit(self):
        outcome = multi_label_hit_rate([["x", "y", "p"]], [["p", "x", "y"]])
        assert outcome.hits == [True]
        assert outcome.effective_predictions == ["p"]

    def test_multi_f1_at_least_single_f1(self):
        rng = np.random.default_rng(9)
        classes = [f"c{i}" for i in range(6)]
        ranked, multi_labels = [], []
        for _ in range(120):
            order = list(rng.permutation(classes))
            truth = classes[int(rng.integers(0, 6))]
            k = int(rng.integers(1, 4))
            labels = [truth] + [c for c in order if c != truth][:k - 1]
            ranked.append(order)
            multi_labels.append(labels)
        single = weighted_prf([r[0] for r in ranked],
                              [m[0] for m in multi_labels])
        outcome = multi_label_hit_rate(ranked, multi_labels)
        assert outcome.report.weighted_f1 >= single.weighted_f1

    def test_empty_label_list_rejected(self):
        with pytest.raises(NisslkitError):
            multi_label_hit_rate([["a"]], [[]])


class TestRecallAtK:
    def test_sole_relevant_item_first(self):
        corpus = np.eye(4)
        labels = ["a", "b", "c", "d"]
        result = recall_at_k(corpus, corpus, labels, labels, 1)
        assert result.value == 1.0
        assert result.evaluated_queries == 4

    def test_partial_recall_fraction(self):
        # query aligned with 2 of its 3 relevant items inside the top 5
        query = np.zeros((1, 8))
        query[0, 0] = 1.0
        corpus = np.zeros((8, 8))
        for i in range(8):
            corpus[i, i] = 1.0
        corpus[1] = l2_normalize(np.array([[0.9] + [0.1] * 7]))[0]
        corpus[2] = l2_normalize(np.array([[0.8] + [0.05] * 7]))[0]
        labels = ["r", "r", "r"] + ["x"] * 5
        corpus[0, :] = 0.0
        corpus[0, 7] = 1.0  # relevant item 0 made orthogonal to the query
        result = recall_at_k(query, corpus, ["r"], labels, 2)
        assert result.value == pytest.approx(2 / 3)

    def test_k_at_least_corpus_size_gives_one(self):
        rng = np.random.default_rng(5)
        corpus = unit_rows(rng, 12, 6)
        labels = [f"l{i % 3}" for i in range(12)]
        result = recall_at_k(corpus, corpus, labels, labels, 12)
        assert result.value == 1.0

    def test_query_without_relevant_items_skipped(self):
        corpus = np.eye(3)
        result = recall_at_k(np.eye(1, 3), corpus, ["zz"], ["a", "b", "c"], 2)
        assert result.evaluated_queries == 0
        assert result.skipped_queries == 1
        assert result.value == 0.0

    def test_exclude_self_drops_own_entry(self):
        # two identical items per label: with self excluded, the other one
        # must be found at rank 1
        emb = np.array([[1.0, 0], [1.0, 0], [0, 1.0], [0, 1.0]])
        labels = ["a", "a", "b", "b"]
        result = recall_at_k(emb, emb, labels, labels, 1, exclude_self=True)
        assert result.value == 1.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(6)
        corpus = unit_rows(rng, 40, 8)
        labels = [f"l{i % 5}" for i in range(40)]
        values = [recall_at_k(corpus, corpus, labels, labels, k,
                              exclude_self=True).value
                  for k in range(1, 15)]
        assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 40), st.integers(1, 12),
           st.booleans())
    def test_matches_exhaustive_oracle(self, seed, n, k, exclude_self):
        rng = np.random.default_rng(seed)
        corpus = unit_rows(rng, n, 5)
        queries = corpus if exclude_self else unit_rows(rng, 7, 5)
        corpus_labels = [f"l{i}" for i in rng.integers(0, 4, n)]
        query_labels = (corpus_labels if exclude_self
                        else [f"l{i}" for i in rng.integers(0, 4, 7)])
        result = recall_at_k(queries, corpus, query_labels, corpus_labels, k,
                             exclude_self=exclude_self)
        mean, evaluated, skipped = oracle_recall_at_k(
            queries, corpus, query_labels, corpus_labels, k, exclude_self)
        assert result.value == pytest.approx(mean, abs=1e-12)
        assert result.evaluated_queries == evaluated
        assert result.skipped_queries == skipped

    def test_bad_k_rejected(self):
        with pytest.raises(NisslkitError):
            recall_at_k(np.eye(2), np.eye(2), ["a", "b"], ["a", "b"], 0)

    def test_retrieval_table_keys(self):
        corpus = np.eye(10)
        labels = [f"l{i % 2}" for i in range(10)]
        table = retrieval_table(corpus, corpus, labels, labels, ks=(1, 5, 10))
        assert sorted(table) == [1, 5, 10]


class TestCoarseSegmentation:
    def tile(self, gx, gy, label="a"):
        return TileRecord("s", gx, gy,
                          BBox(gx * 224, gy * 224, (gx + 1) * 224, (gy + 1) * 224),
                          label, 1.0)

    def test_single_tile_block(self):
        label_map, ids = coarse_segmentation([self.tile(0, 0)], ["a"], (500, 400))
        assert label_map.shape == (400, 500)
        assert (label_map[:224, :224] == ids["a"]).all()
        assert (label_map[224:, :] == 0).all()
        assert (label_map[:, 224:] == 0).all()

    def test_empty_records_all_background(self):
        label_map, ids = coarse_segmentation([], [], (100, 100))
        assert (label_map == 0).all()
        assert ids == {}

    def test_overlapping_tiles_rejected(self):
        t1 = self.tile(0, 0)
        t2 = TileRecord("s", 0, 0, BBox(100, 100, 324, 324), "b", 1.0)
        with pytest.raises(NisslkitError, match="overlaps"):
            coarse_segmentation([t1, t2], ["a", "b"], (500, 500))

    def test_agreement_restricted_to_covered_pixels(self):
        label_map, ids = coarse_segmentation(
            [self.tile(0, 0), self.tile(1, 0, "b")], ["a", "b"], (448, 224))
        truth = label_map.copy()
        truth[:, 300:] = ids["a"]  # corrupt part of tile (1, 0)
        agreement = segmentation_agreement(label_map, truth)
        wrong = 224 * (448 - 300)
        assert agreement == pytest.approx(1.0 - wrong / (448 * 224))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(NisslkitError):
            segmentation_agreement(np.zeros((2, 2)), np.zeros((3, 3)))
