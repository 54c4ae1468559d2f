"""Evaluation harness: precision-recall sweeps with best-F1 threshold
selection, and relative counting error for the counting tasks.

A prediction is positive at threshold t when its score is strictly greater
than t, matching the positivity rule used by the detectors. The sweep runs
over the unique score values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import KeyMismatchError, MissingInputError, SchemaViolationError


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    f1: float

    def to_json(self) -> dict:
        return {
            "threshold": self.threshold,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass(frozen=True)
class EvalReport:
    points: tuple[PRPoint, ...] = ()
    best_f1: float | None = None
    best_threshold: float | None = None
    counting_error_percent: float | None = None

    def to_json(self) -> dict:
        return {
            "points": [p.to_json() for p in self.points],
            "best_f1": self.best_f1,
            "best_threshold": self.best_threshold,
            "counting_error_percent": self.counting_error_percent,
        }


def _check_keys(pred: dict, truth: dict) -> None:
    if set(pred) != set(truth):
        missing = sorted(set(truth) - set(pred))[:5]
        extra = sorted(set(pred) - set(truth))[:5]
        raise KeyMismatchError(
            f"prediction and truth keys differ (missing {missing}, extra {extra})"
        )


def pr_at_threshold(
    scores: dict[str, float], labels: dict[str, bool], threshold: float
) -> PRPoint:
    """Precision/recall/F1 treating score > threshold as positive.

    With zero predicted positives precision is defined as 1.0; F1 is 0 when
    precision + recall is 0.
    """
    tp = fp = fn = 0
    for key, score in scores.items():
        predicted = score > threshold
        actual = labels[key]
        if predicted and actual:
            tp += 1
        elif predicted and not actual:
            fp += 1
        elif not predicted and actual:
            fn += 1
    precision = tp / (tp + fp) if (tp + fp) else 1.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return PRPoint(threshold=threshold, precision=precision, recall=recall, f1=f1)


def pr_sweep(scores: dict[str, float], labels: dict[str, bool]) -> EvalReport:
    """Sweep thresholds over the unique score values; report every PR point
    (ascending threshold) and the best-F1 threshold (ties take the lowest)."""
    _check_keys(scores, labels)
    if not scores:
        raise SchemaViolationError("empty score set")
    points = tuple(
        pr_at_threshold(scores, labels, t) for t in sorted(set(scores.values()))
    )
    best = max(points, key=lambda p: (p.f1, -p.threshold))
    return EvalReport(points=points, best_f1=best.f1, best_threshold=best.threshold)


def counting_error(pred: dict[str, float], truth: dict[str, float]) -> float:
    """Mean relative counting error |pred - truth| / truth, in percent.

    Patches with zero true count carry no defined relative error and are
    skipped; an all-zero truth set is rejected.
    """
    _check_keys(pred, truth)
    errors = []
    for key, t in truth.items():
        if t == 0:
            continue
        errors.append(abs(pred[key] - t) / t)
    if not errors:
        raise SchemaViolationError("counting error undefined: no nonzero true counts")
    return sum(errors) / len(errors) * 100.0


def _load_jsonl(path: str | Path, value_field: str) -> dict[str, float]:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"file not found: {path}")
    out = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        try:
            out[str(obj["key"])] = float(obj[value_field])
        except KeyError as exc:
            raise SchemaViolationError(f"line missing field {exc}: {line}") from exc
    return out


def evaluate_files(pred_path: str | Path, truth_path: str | Path, mode: str = "classification") -> EvalReport:
    """Evaluate prediction/truth JSONL files.

    classification: predictions carry "score", truth carries "label" (0/1);
    counting: both carry "count".
    """
    if mode == "classification":
        scores = _load_jsonl(pred_path, "score")
        labels = {k: bool(v) for k, v in _load_jsonl(truth_path, "label").items()}
        return pr_sweep(scores, labels)
    if mode == "counting":
        pred = _load_jsonl(pred_path, "count")
        truth = _load_jsonl(truth_path, "count")
        return EvalReport(counting_error_percent=counting_error(pred, truth))
    raise SchemaViolationError(f"unknown eval mode {mode!r}")
