"""Metric tests against brute-force reference implementations."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jigsawssl.errors import MetricError, ShapeError
from jigsawssl.metrics import (
    accuracy,
    build_report,
    confusion_matrix,
    macro_f1,
    precision_recall,
    roc_auc,
)

from oracles import accuracy_ref, auc_ref, macro_f1_ref


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_hand_case(self):
        assert accuracy([0, 1, 1, 0], [0, 1, 0, 0]) == 0.75

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            accuracy([0, 1], [0])


class TestMacroF1:
    def test_perfect(self):
        assert macro_f1([0, 1, 2], [0, 1, 2], 3) == 1.0

    def test_binary_hand_case(self):
        # preds all 1 vs labels (1,1,0,0): F1_1 = 2/3, F1_0 = 0 -> macro 1/3
        assert macro_f1([1, 1, 1, 1], [1, 1, 0, 0], 2) == pytest.approx(1 / 3)

    def test_degenerate_single_class_uses_present_classes(self):
        assert macro_f1([0, 0], [0, 0]) == 1.0

    def test_weighted_variant(self):
        got = macro_f1([1, 1, 1, 1], [1, 1, 0, 0], 2, weighted=True)
        assert got == pytest.approx(0.5 * 0.0 + 0.5 * (2 / 3))

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(0)
        preds = rng.integers(0, 4, 50)
        labels = rng.integers(0, 4, 50)
        perm = np.array([2, 0, 3, 1])
        assert macro_f1(perm[preds], perm[labels], 4) == pytest.approx(
            macro_f1(preds, labels, 4)
        )
        assert accuracy(perm[preds], perm[labels]) == accuracy(preds, labels)


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_spec_hand_case(self):
        assert roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75

    def test_all_equal_scores_give_half(self):
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_one_class_absent(self):
        with pytest.raises(MetricError):
            roc_auc([0.1, 0.2], [1, 1])

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.random(40)
        labels = rng.integers(0, 2, 40)
        if labels.sum() in (0, 40):
            labels[0] = 1 - labels[0]
        base = roc_auc(scores, labels)
        assert roc_auc(np.exp(5 * scores), labels) == pytest.approx(base, abs=1e-12)
        assert roc_auc(scores**3 + 2, labels) == pytest.approx(base, abs=1e-12)

    def test_multiclass_macro_matches_manual_ovr(self):
        rng = np.random.default_rng(2)
        labels = rng.integers(0, 3, 60)
        scores = rng.random((60, 3))
        expect = np.mean(
            [auc_ref(scores[:, c].tolist(), (labels == c).astype(int).tolist()) for c in range(3)]
        )
        assert roc_auc(scores, labels) == pytest.approx(expect, abs=1e-12)


class TestAgainstBruteForce:
    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**31 - 1))
    def test_random_instances_match_oracles(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 30))
        m = int(rng.integers(2, 5))
        preds = rng.integers(0, m, n)
        labels = rng.integers(0, m, n)
        assert accuracy(preds, labels) == pytest.approx(
            accuracy_ref(preds.tolist(), labels.tolist()), abs=1e-12
        )
        assert macro_f1(preds, labels, m) == pytest.approx(
            macro_f1_ref(preds.tolist(), labels.tolist(), m), abs=1e-12
        )
        scores = np.round(rng.random(n), 2)  # rounding forces ties
        binary = (labels % 2 == 0).astype(int)
        if 0 < binary.sum() < n:
            assert roc_auc(scores, binary) == pytest.approx(
                auc_ref(scores.tolist(), binary.tolist()), abs=1e-12
            )


class TestReport:
    def test_fields_and_consistency(self):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 3, 30)
        scores = rng.random((30, 3))
        preds = scores.argmax(axis=1)
        report = build_report(preds, labels, scores, 3, dataset_id="synthetic")
        cm = np.asarray(report.confusion)
        assert report.accuracy == pytest.approx(np.trace(cm) / cm.sum())
        assert 0 <= report.macro_f1 <= 1 and 0 <= report.auc <= 1
        assert report.num_samples == 30
        payload = report.to_json()
        for key in ("accuracy", "macro_f1", "auc", "confusion"):
            assert f'"{key}"' in payload

    def test_binary_report_uses_positive_scores(self):
        labels = np.array([0, 0, 1, 1])
        scores = np.array([[0.9, 0.1], [0.6, 0.4], [0.65, 0.35], [0.2, 0.8]])
        report = build_report(scores.argmax(1), labels, scores, 2)
        assert report.auc == 0.75

    def test_confusion_and_precision_recall(self):
        preds = [0, 0, 1, 1, 1]
        labels = [0, 1, 1, 1, 0]
        cm = confusion_matrix(preds, labels, 2)
        np.testing.assert_array_equal(cm, [[1, 1], [1, 2]])
        precision, recall = precision_recall(preds, labels, 2)
        np.testing.assert_allclose(precision, [0.5, 2 / 3])
        np.testing.assert_allclose(recall, [0.5, 2 / 3])
