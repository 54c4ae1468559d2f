import json

import pytest
from hypothesis import given, settings, strategies as st

from meningrade.errors import KeyMismatchError, SchemaViolationError
from meningrade.evalharness import (
    counting_error,
    evaluate_files,
    pr_at_threshold,
    pr_sweep,
)


class TestPrAtThreshold:
    def test_hand_computed_tp3_fp1_fn1(self):
        scores = {"a": 0.9, "b": 0.8, "c": 0.7, "d": 0.2, "e": 0.6, "f": 0.1}
        labels = {"a": True, "b": True, "c": True, "d": True, "e": False, "f": False}
        pt = pr_at_threshold(scores, labels, 0.5)
        assert pt.precision == 0.75
        assert pt.recall == 0.75
        assert pt.f1 == 0.75

    def test_zero_predictions_precision_one(self):
        pt = pr_at_threshold({"a": 0.3}, {"a": True}, 0.9)
        assert pt.precision == 1.0
        assert pt.recall == 0.0
        assert pt.f1 == 0.0


class TestPrSweep:
    def test_perfect_predictions(self):
        scores = {"p1": 1.0, "p2": 1.0, "n1": 0.0, "n2": 0.0}
        labels = {"p1": True, "p2": True, "n1": False, "n2": False}
        report = pr_sweep(scores, labels)
        assert report.best_f1 == 1.0
        # every threshold below the minimum positive score yields F1 = 1.0
        for pt in report.points:
            if pt.threshold < 1.0:
                assert pt.f1 == 1.0

    def test_recall_non_increasing_as_threshold_rises(self):
        scores = {f"k{i}": i / 10 for i in range(10)}
        labels = {f"k{i}": i % 2 == 0 for i in range(10)}
        report = pr_sweep(scores, labels)
        recalls = [pt.recall for pt in report.points]
        assert recalls == sorted(recalls, reverse=True)

    def test_best_threshold_is_sweep_argmax(self):
        scores = {"a": 0.9, "b": 0.6, "c": 0.4, "d": 0.2}
        labels = {"a": True, "b": True, "c": False, "d": False}
        report = pr_sweep(scores, labels)
        assert report.best_f1 == max(pt.f1 for pt in report.points)
        best_pts = [pt for pt in report.points if pt.f1 == report.best_f1]
        assert report.best_threshold == min(pt.threshold for pt in best_pts)

    def test_key_mismatch_is_hard_error(self):
        with pytest.raises(KeyMismatchError):
            pr_sweep({"a": 0.5}, {"b": True})

    @settings(max_examples=50, deadline=None)
    @given(
        n=st.integers(2, 40),
        seed=st.integers(0, 2**31),
    )
    def test_matches_naive_per_threshold_recount(self, n, seed):
        import numpy as np

        rng = np.random.default_rng(seed)
        scores = {f"k{i}": round(float(rng.uniform()), 3) for i in range(n)}
        labels = {f"k{i}": bool(rng.integers(0, 2)) for i in range(n)}
        report = pr_sweep(scores, labels)
        for pt in report.points:
            tp = sum(1 for k in scores if scores[k] > pt.threshold and labels[k])
            fp = sum(1 for k in scores if scores[k] > pt.threshold and not labels[k])
            fn = sum(1 for k in scores if scores[k] <= pt.threshold and labels[k])
            precision = tp / (tp + fp) if tp + fp else 1.0
            recall = tp / (tp + fn) if tp + fn else 0.0
            assert pt.precision == precision
            assert pt.recall == recall


class TestCountingError:
    def test_exact_mean_relative_error(self):
        pred = {"a": 110.0, "b": 90.0}
        truth = {"a": 100.0, "b": 100.0}
        assert counting_error(pred, truth) == pytest.approx(10.0)

    def test_zero_truth_patches_skipped(self):
        pred = {"a": 110.0, "b": 5.0}
        truth = {"a": 100.0, "b": 0.0}
        assert counting_error(pred, truth) == pytest.approx(10.0)

    def test_all_zero_truth_rejected(self):
        with pytest.raises(SchemaViolationError):
            counting_error({"a": 1.0}, {"a": 0.0})


class TestEvaluateFiles:
    def test_classification_files(self, tmp_path):
        pred = tmp_path / "pred.jsonl"
        truth = tmp_path / "truth.jsonl"
        pred.write_text(
            "\n".join(
                json.dumps({"key": k, "score": s})
                for k, s in [("a", 0.9), ("b", 0.2)]
            )
        )
        truth.write_text(
            "\n".join(
                json.dumps({"key": k, "label": l}) for k, l in [("a", 1), ("b", 0)]
            )
        )
        report = evaluate_files(pred, truth)
        assert report.best_f1 == 1.0

    def test_counting_files(self, tmp_path):
        pred = tmp_path / "pred.jsonl"
        truth = tmp_path / "truth.jsonl"
        pred.write_text(json.dumps({"key": "a", "count": 60}))
        truth.write_text(json.dumps({"key": "a", "count": 50}))
        report = evaluate_files(pred, truth, mode="counting")
        assert report.counting_error_percent == pytest.approx(20.0)
