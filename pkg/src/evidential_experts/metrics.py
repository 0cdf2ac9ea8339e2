"""Classification and detection metrics.

The detection metrics (ranking AUC, false-positive rate at 95% recall)
treat higher scores as more positive.  AUC uses the rank-sum form with
half-credit for ties, which agrees exactly with brute-force pairwise
comparison.  Calibration error uses equal-width right-closed bins over
[0, 1], with confidence 0 assigned to the first bin.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .validation import check_probability_vector


class UndefinedMetricError(ValueError):
    """Raised when a metric is undefined for the given inputs."""


@dataclass(frozen=True)
class ScoredOutcome:
    """One scored sample for a binary detection task."""

    score: float
    positive: bool


def _split_outcomes(outcomes: Sequence[ScoredOutcome]) -> tuple[np.ndarray, np.ndarray]:
    if len(outcomes) == 0:
        raise UndefinedMetricError("no outcomes given")
    scores = np.array([o.score for o in outcomes], dtype=float)
    positives = np.array([bool(o.positive) for o in outcomes])
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if positives.all() or not positives.any():
        raise UndefinedMetricError(
            "detection metrics need at least one positive and one negative"
        )
    return scores, positives


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the mean rank of their group."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0])
    sorted_scores = scores[order]
    i = 0
    while i < sorted_scores.shape[0]:
        j = i
        while j + 1 < sorted_scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def auc(outcomes: Sequence[ScoredOutcome]) -> float:
    """Probability a random positive outscores a random negative (ties = 1/2)."""
    scores, positives = _split_outcomes(outcomes)
    n_pos = int(positives.sum())
    n_neg = scores.shape[0] - n_pos
    ranks = _average_ranks(scores)
    rank_sum = ranks[positives].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def fpr_at_95_tpr(outcomes: Sequence[ScoredOutcome]) -> float:
    """False-positive rate at the tightest threshold reaching 95% recall.

    Samples with score >= threshold count positive.  Among observed scores,
    the largest threshold whose true-positive rate reaches 0.95 is chosen
    (it always exists: the minimum score admits everything).
    """
    scores, positives = _split_outcomes(outcomes)
    pos_sorted = np.sort(scores[positives])
    neg_sorted = np.sort(scores[~positives])
    n_pos = pos_sorted.shape[0]
    n_neg = neg_sorted.shape[0]

    candidates = np.unique(scores)[::-1]
    tpr = (n_pos - np.searchsorted(pos_sorted, candidates, side="left")) / n_pos
    threshold = candidates[int(np.argmax(tpr >= 0.95))]
    return (n_neg - np.searchsorted(neg_sorted, threshold, side="left")) / n_neg


def ece(confidences, correct_flags, num_bins: int = 15) -> float:
    """Expected calibration error over equal-width right-closed bins."""
    conf = np.asarray(confidences, dtype=float)
    correct = np.asarray(correct_flags, dtype=float)
    if conf.ndim != 1 or conf.shape != correct.shape:
        raise ValueError("confidences and correct_flags must be equal-length vectors")
    if conf.shape[0] == 0:
        raise ValueError("ece is undefined on empty input")
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    if not np.all(np.isfinite(conf)) or conf.min() < 0.0 or conf.max() > 1.0:
        raise ValueError("confidences must lie in [0, 1]")
    if not np.all((correct == 0.0) | (correct == 1.0)):
        raise ValueError("correct_flags must be boolean")

    bins = np.ceil(conf * num_bins).astype(int)
    bins = np.clip(bins, 1, num_bins)
    total = 0.0
    n = conf.shape[0]
    for b in range(1, num_bins + 1):
        members = bins == b
        count = int(members.sum())
        if count == 0:
            continue
        gap = abs(conf[members].mean() - correct[members].mean())
        total += (count / n) * gap
    return total


def accuracy(preds, labels, regions) -> dict[str, float]:
    """Fraction correct, overall and per region of the true class.

    regions gives each sample's region name; regions with no samples are
    omitted from the result rather than reported as zero.
    """
    p = np.asarray(preds)
    y = np.asarray(labels)
    r = np.asarray(regions)
    if p.shape != y.shape or p.shape != r.shape or p.ndim != 1:
        raise ValueError("preds, labels, and regions must be equal-length vectors")
    if p.shape[0] == 0:
        raise ValueError("accuracy is undefined on empty input")
    correct = p == y
    result = {"all": float(correct.mean())}
    for region in dict.fromkeys(r.tolist()):
        members = r == region
        result[str(region)] = float(correct[members].mean())
    return result


def regional_accuracy(preds, labels, region_of_class) -> float:
    """Fraction of predictions landing in the true class's region."""
    p = np.asarray(preds)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1:
        raise ValueError("preds and labels must be equal-length vectors")
    if p.shape[0] == 0:
        raise ValueError("regional_accuracy is undefined on empty input")
    region = np.asarray(region_of_class)
    return float((region[p] == region[y]).mean())


def mcp_score(probs) -> float:
    """Maximum class probability: a confidence (negate for an uncertainty)."""
    arr = check_probability_vector(probs)
    return float(arr.max())


def entropy_score(probs) -> float:
    """Shannon entropy of a probability vector (natural log, 0 log 0 = 0)."""
    arr = check_probability_vector(probs)
    nonzero = arr[arr > 0.0]
    return float(-(nonzero * np.log(nonzero)).sum())
