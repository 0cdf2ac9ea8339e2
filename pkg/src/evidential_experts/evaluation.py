"""Evaluation harness: classification, tail detection, OOD detection,
failure prediction, expert engagement, and per-class uncertainty.

For every sample the M expert opinions are combined into a joint
uncertainty, the prefix weights feed the temperature-softmax fusion of the
evidence vectors, and the fused opinion yields the prediction, its
normalized probabilities, and the confidence used for calibration.  The
detection tasks rank samples by an uncertainty score: the joint combined
uncertainty by default, with max-probability and entropy scorers available
for comparison.  Reports serialize to a stable JSON schema (sorted keys,
fixed names) so repeated runs diff cleanly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset, OODDataset, REGIONS
from .metrics import (
    ScoredOutcome,
    UndefinedMetricError,
    accuracy,
    auc,
    ece,
    fpr_at_95_tpr,
    regional_accuracy,
)
from .network import ExpertEnsemble, _forward_cache, gate_mask
from .opinions import FusionConfig, batched_fusion_trace, fuse_evidence
from .validation import check_features

REPORT_SCHEMA_VERSION = 1

SCORERS = ("evu", "mcp", "entropy")


@dataclass
class EvalReport:
    """All task metrics for one model/dataset pair.

    Detection entries are dicts with "auc" and "fpr95"; a task that is
    undefined for the inputs (no OOD set, no failures, single-region data)
    is simply absent from `tasks`.  Engagement maps each region to the
    fraction of its samples engaging 1..M experts (fractions sum to 1).
    """

    accuracy: dict[str, float]
    regional_accuracy: float
    ece: dict[str, float]
    tasks: dict[str, dict[str, float]]
    engagement: dict[str, dict[str, float]]
    per_class_uncertainty: list[float]
    counts: dict[str, int]
    scorer: str = "evu"
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "scorer": self.scorer,
            "counts": self.counts,
            "accuracy": self.accuracy,
            "regional_accuracy": self.regional_accuracy,
            "ece": self.ece,
            "tasks": self.tasks,
            "engagement": self.engagement,
            "per_class_uncertainty": self.per_class_uncertainty,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


@dataclass
class _FusedOutputs:
    joint_uncertainty: np.ndarray
    prefix_weights: np.ndarray
    fused_evidence: np.ndarray
    probs: np.ndarray
    predictions: np.ndarray
    engaged: np.ndarray


def fused_outputs(model: ExpertEnsemble, features: np.ndarray,
                  fusion: FusionConfig, gate_threshold: float) -> _FusedOutputs:
    """Joint-opinion inference over a batch, using min(M, max_experts) heads."""
    x = check_features(features, dim=model.config.input_dim)
    evidence, _, _, _ = _forward_cache(model, x)
    n_use = min(model.config.num_experts, fusion.max_experts)
    evidence = evidence[:, :n_use, :]
    joint, prefix, _ = batched_fusion_trace(evidence)
    fused = np.stack([
        fuse_evidence(evidence[i], prefix[i], fusion) for i in range(x.shape[0])
    ])
    alpha = fused + 1.0
    probs = alpha / alpha.sum(axis=1, keepdims=True)
    predictions = fused.argmax(axis=1)
    engaged = gate_mask(prefix, gate_threshold).sum(axis=1)
    return _FusedOutputs(joint, prefix, fused, probs, predictions, engaged)


def _uncertainty_scores(out: _FusedOutputs, scorer: str) -> np.ndarray:
    if scorer == "evu":
        return out.joint_uncertainty
    if scorer == "mcp":
        return -out.probs.max(axis=1)
    if scorer == "entropy":
        p = out.probs
        terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
        return -terms.sum(axis=1)
    raise ValueError(f"unknown scorer {scorer!r}; expected one of {SCORERS}")


def _detection_entry(scores: np.ndarray, positives: np.ndarray) -> dict[str, float] | None:
    outcomes = [ScoredOutcome(float(s), bool(p)) for s, p in zip(scores, positives)]
    try:
        return {"auc": auc(outcomes), "fpr95": fpr_at_95_tpr(outcomes)}
    except UndefinedMetricError:
        return None


def run_tasks(model: ExpertEnsemble, test_set: LabeledDataset,
              region_of_class, ood_set: OODDataset | None = None, *,
              fusion: FusionConfig | None = None, gate_threshold: float = 0.54,
              ece_bins: int = 15, scorer: str = "evu") -> EvalReport:
    """Evaluate every task on a balanced test set (and optional OOD set).

    region_of_class maps class index to its region name.  Tail detection
    marks samples of tail classes positive, OOD detection marks the OOD
    samples positive, and failure prediction marks misclassified samples
    positive; each ranks by the chosen uncertainty scorer.  Calibration uses
    the maximum fused probability as confidence.
    """
    if fusion is None:
        fusion = FusionConfig(max_experts=model.config.num_experts)
    if scorer not in SCORERS:
        raise ValueError(f"unknown scorer {scorer!r}; expected one of {SCORERS}")
    region = np.asarray(region_of_class)
    if region.shape[0] != model.config.num_classes:
        raise ValueError("region_of_class length must equal the class count")
    if test_set.dim != model.config.input_dim:
        raise ValueError(
            f"test set dimension {test_set.dim} does not match model input "
            f"dimension {model.config.input_dim}"
        )

    out = fused_outputs(model, test_set.features, fusion, gate_threshold)
    labels = test_set.labels
    sample_regions = region[labels]
    scores = _uncertainty_scores(out, scorer)
    correct = out.predictions == labels

    acc = accuracy(out.predictions, labels, sample_regions)
    reg_acc = regional_accuracy(out.predictions, labels, region)

    confidences = out.probs.max(axis=1)
    ece_by_region = {"all": ece(confidences, correct.astype(float), ece_bins)}
    for name in REGIONS:
        members = sample_regions == name
        if members.any():
            ece_by_region[name] = ece(
                confidences[members], correct[members].astype(float), ece_bins
            )

    tasks: dict[str, dict[str, float]] = {}
    tail_entry = _detection_entry(scores, sample_regions == "tail")
    if tail_entry is not None:
        tasks["tail_detection"] = tail_entry
    failure_entry = _detection_entry(scores, ~correct)
    if failure_entry is not None:
        tasks["failure_prediction"] = failure_entry

    counts = {"test": int(test_set.num_samples)}
    if ood_set is not None:
        if ood_set.dim != model.config.input_dim:
            raise ValueError(
                f"OOD set dimension {ood_set.dim} does not match model input "
                f"dimension {model.config.input_dim}"
            )
        ood_out = fused_outputs(model, ood_set.features, fusion, gate_threshold)
        ood_scores = _uncertainty_scores(ood_out, scorer)
        all_scores = np.concatenate([scores, ood_scores])
        positives = np.concatenate([
            np.zeros(scores.shape[0], dtype=bool),
            np.ones(ood_scores.shape[0], dtype=bool),
        ])
        ood_entry = _detection_entry(all_scores, positives)
        if ood_entry is not None:
            tasks["ood_detection"] = ood_entry
        counts["ood"] = int(ood_set.num_samples)

    max_engaged = min(model.config.num_experts, fusion.max_experts)
    engagement: dict[str, dict[str, float]] = {}
    for name in ("all", *REGIONS):
        members = np.ones_like(labels, dtype=bool) if name == "all" else sample_regions == name
        if not members.any():
            continue
        sub = out.engaged[members]
        engagement[name] = {
            str(m): float((sub == m).mean()) for m in range(1, max_engaged + 1)
        }

    per_class = []
    for k in range(model.config.num_classes):
        members = labels == k
        per_class.append(float(out.joint_uncertainty[members].mean()) if members.any() else None)

    return EvalReport(
        accuracy=acc,
        regional_accuracy=reg_acc,
        ece=ece_by_region,
        tasks=tasks,
        engagement=engagement,
        per_class_uncertainty=per_class,
        counts=counts,
        scorer=scorer,
    )
