import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fformation.metrics import report, report_to_dict


class TestReport:
    def test_all_correct_is_all_ones(self):
        rep = report(["a", "b", "a"], ["a", "b", "a"], ("a", "b"))
        assert rep.accuracy == 1.0
        assert rep.weighted_f1 == 1.0
        np.testing.assert_array_equal(rep.precision, [1.0, 1.0])
        np.testing.assert_array_equal(rep.recall, [1.0, 1.0])

    def test_binary_counts_from_confusion_arithmetic(self):
        # TP=46, FP=4, FN=4 for the positive class: precision, recall and F1
        # all equal 46/50 = 0.92.
        gold = ["pos"] * 50 + ["neg"] * 50
        pred = ["pos"] * 46 + ["neg"] * 4 + ["pos"] * 4 + ["neg"] * 46
        rep = report(gold, pred, ("pos", "neg"))
        pc = rep.per_class("pos")
        assert pc["precision"] == pytest.approx(0.92)
        assert pc["recall"] == pytest.approx(0.92)
        assert pc["f1"] == pytest.approx(0.92)
        assert pc["support"] == 50

    def test_confusion_rows_sum_to_support(self):
        gold = ["a", "a", "b", "c", "c", "c"]
        pred = ["a", "b", "b", "c", "a", "c"]
        rep = report(gold, pred, ("a", "b", "c"))
        np.testing.assert_array_equal(rep.confusion.sum(axis=1), rep.support)

    def test_confusion_trace_over_n_is_accuracy(self):
        gold = ["a", "a", "b", "c", "c", "c"]
        pred = ["a", "b", "b", "c", "a", "c"]
        rep = report(gold, pred, ("a", "b", "c"))
        assert np.trace(rep.confusion) / len(gold) == pytest.approx(rep.accuracy)

    def test_weighted_f1_is_support_weighted_sum(self):
        gold = ["a", "a", "a", "b"]
        pred = ["a", "a", "b", "b"]
        rep = report(gold, pred, ("a", "b"))
        by_hand = (3 * rep.f1[0] + 1 * rep.f1[1]) / 4
        assert rep.weighted_f1 == pytest.approx(by_hand)

    def test_never_predicted_class_flagged_with_zero_precision(self):
        rep = report(["a", "b"], ["a", "a"], ("a", "b", "c"))
        assert rep.zero_division == (False, True, True)
        assert rep.precision[1] == 0.0
        assert rep.precision[2] == 0.0

    def test_order_invariance(self, rng):
        gold = list(rng.choice(["a", "b", "c"], size=60))
        pred = list(rng.choice(["a", "b", "c"], size=60))
        rep1 = report(gold, pred, ("a", "b", "c"))
        perm = rng.permutation(60)
        rep2 = report([gold[i] for i in perm], [pred[i] for i in perm], ("a", "b", "c"))
        assert rep1.accuracy == rep2.accuracy
        np.testing.assert_array_equal(rep1.confusion, rep2.confusion)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="gold"):
            report(["a"], ["a", "b"], ("a", "b"))

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            report(["a"], ["z"], ("a", "b"))

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            report([], [], ("a",))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_micro_f1_equals_accuracy(self, seed):
        # Single-label multi-class: pooling TP/FP/FN over classes makes
        # micro precision = micro recall = accuracy.
        r = np.random.default_rng(seed)
        classes = ("a", "b", "c", "d")
        n = int(r.integers(1, 40))
        gold = list(r.choice(classes, size=n))
        pred = list(r.choice(classes, size=n))
        rep = report(gold, pred, classes)
        tp = np.diag(rep.confusion).sum()
        fp = rep.confusion.sum() - tp
        micro_p = tp / (tp + fp)
        assert micro_p == pytest.approx(rep.accuracy)

    def test_report_to_dict_round_trips_fields(self):
        rep = report(["a", "b"], ["a", "b"], ("a", "b"))
        doc = report_to_dict(rep)
        assert doc["accuracy"] == 1.0
        assert doc["per_class"]["a"]["f1"] == 1.0
        assert doc["confusion"] == [[1, 0], [0, 1]]
