"""Training objectives for evidence-producing experts, with exact gradients.

Per-expert fit is a marginal-likelihood term on alpha = e + 1 (log S minus
the log of the true-class parameter) plus an annealed KL penalty that pulls
the off-class part of the Dirichlet toward uniform.  An ensemble-level
diversity term rewards experts whose normalized profiles differ from their
average.  The joint objective sums the per-expert terms over samples,
gated per sample by prefix weights, and all gradients with respect to the
evidence are analytic (the gate is treated as a constant mask).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .opinions import FusionTrace
from .special import digamma, lgamma, trigamma
from .validation import check_evidence_vector, check_one_hot, check_probability_vector


@dataclass(frozen=True)
class AnnealSchedule:
    """Linear ramp min(1, epoch / horizon) for the KL penalty weight."""

    horizon: int
    epoch: int = 0

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon must be an integer >= 1")
        if int(self.epoch) != self.epoch or self.epoch < 0:
            raise ValueError("epoch must be a non-negative integer")

    @property
    def kl_factor(self) -> float:
        return min(1.0, self.epoch / self.horizon)

    def at(self, epoch: int) -> "AnnealSchedule":
        return AnnealSchedule(self.horizon, epoch)


@dataclass(frozen=True)
class LossConfig:
    """Joint-objective settings.

    gate_threshold: prefix-weight cutoff for engaging an expert's loss term.
    diversity_weight: coefficient on the ensemble diversity term.
    anneal: KL ramp schedule.
    kl_enabled: ablation switch; False forces the KL factor to zero.
    """

    gate_threshold: float = 0.54
    diversity_weight: float = 0.01
    anneal: AnnealSchedule = field(default_factory=lambda: AnnealSchedule(horizon=60))
    kl_enabled: bool = True

    def __post_init__(self):
        if not (0.0 <= self.gate_threshold <= 1.0):
            raise ValueError("gate_threshold must lie in [0, 1]")
        if not np.isfinite(self.diversity_weight) or self.diversity_weight < 0.0:
            raise ValueError("diversity_weight must be non-negative")

    def effective_anneal(self) -> AnnealSchedule:
        return self.anneal if self.kl_enabled else self.anneal.at(0)


@dataclass(frozen=True, eq=False)
class CategoricalProfile:
    """Normalized Dirichlet parameters alpha / S as a categorical distribution."""

    probs: np.ndarray

    def __post_init__(self):
        check_probability_vector(self.probs, tol=1e-12)

    @classmethod
    def from_alpha(cls, alpha) -> "CategoricalProfile":
        arr = np.asarray(alpha, dtype=float)
        if arr.ndim != 1 or np.any(arr <= 0.0) or not np.all(np.isfinite(arr)):
            raise ValueError("alpha must be a 1-D vector of positive finite entries")
        return cls(arr / arr.sum())


def evidential_nll(e, y) -> float:
    """Marginal-likelihood loss log(S) - log(alpha_true) with alpha = e + 1."""
    ev = check_evidence_vector(e)
    label = check_one_hot(y, ev.shape[0])
    alpha = ev + 1.0
    strength = alpha.sum()
    true_class = int(np.argmax(label))
    return float(np.log(strength) - np.log(alpha[true_class]))


def kl_regularizer(e, y) -> float:
    """KL from the off-class-adjusted Dirichlet to the uniform Dirichlet.

    The true-class evidence is masked out, so the penalty is zero exactly
    when all off-class evidence is zero and is independent of the
    true-class evidence.
    """
    ev = check_evidence_vector(e)
    label = check_one_hot(y, ev.shape[0])
    num_classes = ev.shape[0]
    adj_alpha = 1.0 + (1.0 - label) * ev
    adj_strength = adj_alpha.sum()
    return float(
        lgamma(adj_strength)
        - lgamma(float(num_classes))
        - lgamma(adj_alpha).sum()
        + ((adj_alpha - 1.0) * (digamma(adj_alpha) - digamma(adj_strength))).sum()
    )


def single_loss(e, y, schedule: AnnealSchedule) -> float:
    """Per-expert objective: fit term plus annealed KL penalty."""
    return evidential_nll(e, y) + schedule.kl_factor * kl_regularizer(e, y)


def diversity_loss(alphas) -> float:
    """Negative mean KL of each expert's profile from the average profile.

    Always <= 0; equals 0 iff all normalized profiles coincide.
    """
    arr = np.asarray(alphas, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 2:
        raise ValueError(f"alphas must have shape (M >= 1, K >= 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError("Dirichlet parameters must be positive and finite")
    profiles = arr / arr.sum(axis=1, keepdims=True)
    mean_alpha = arr.mean(axis=0)
    mean_profile = mean_alpha / mean_alpha.sum()
    kl_terms = (profiles * (np.log(profiles) - np.log(mean_profile))).sum(axis=1)
    return float(-kl_terms.mean())


def grad_single_loss(e, y, schedule: AnnealSchedule) -> np.ndarray:
    """Exact gradient of single_loss with respect to the evidence vector."""
    ev = check_evidence_vector(e)
    label = check_one_hot(y, ev.shape[0])
    num_classes = ev.shape[0]
    alpha = ev + 1.0
    strength = alpha.sum()
    true_class = int(np.argmax(label))

    grad = np.full(num_classes, 1.0 / strength)
    grad[true_class] -= 1.0 / alpha[true_class]

    factor = schedule.kl_factor
    if factor != 0.0:
        off = 1.0 - label
        adj_alpha = 1.0 + off * ev
        adj_strength = adj_alpha.sum()
        grad += factor * off * (
            (adj_alpha - 1.0) * trigamma(adj_alpha)
            - (adj_strength - num_classes) * trigamma(adj_strength)
        )
    return grad


def grad_diversity_loss(alphas) -> np.ndarray:
    """Exact gradient of diversity_loss with respect to each alpha vector.

    Returns an (M, K) array aligned with the input.
    """
    arr = np.asarray(alphas, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 2:
        raise ValueError(f"alphas must have shape (M >= 1, K >= 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError("Dirichlet parameters must be positive and finite")
    m_total = arr.shape[0]
    strengths = arr.sum(axis=1, keepdims=True)
    profiles = arr / strengths
    mean_alpha = arr.mean(axis=0)
    mean_strength = mean_alpha.sum()
    mean_profile = mean_alpha / mean_strength

    log_ratio = np.log(profiles) - np.log(mean_profile)
    kl_terms = (profiles * log_ratio).sum(axis=1, keepdims=True)
    # Direct dependence through the expert's own profile, plus the shared
    # dependence of the average profile on every expert.
    own = (log_ratio - kl_terms) / strengths
    shared = (1.0 - profiles.mean(axis=0) / mean_profile) / mean_strength
    return -(own + shared) / m_total


def batched_single_terms(
    evidences: np.ndarray, labels: np.ndarray, schedule: AnnealSchedule
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized single_loss values and evidence gradients.

    evidences: (N, M, K) non-negative; labels: (N, K) one-hot rows.
    Returns (values (N, M), grads (N, M, K)); row/expert (i, m) matches
    single_loss / grad_single_loss on the corresponding slice.
    """
    ev = np.asarray(evidences, dtype=float)
    lab = np.asarray(labels, dtype=float)
    n, m_total, num_classes = ev.shape
    alpha = ev + 1.0
    strength = alpha.sum(axis=2)
    alpha_true = np.einsum("nmk,nk->nm", alpha, lab)
    values = np.log(strength) - np.log(alpha_true)

    grads = 1.0 / strength[:, :, None] - lab[:, None, :] / alpha_true[:, :, None]

    factor = schedule.kl_factor
    if factor != 0.0:
        off = (1.0 - lab)[:, None, :]
        adj_alpha = 1.0 + off * ev
        adj_strength = adj_alpha.sum(axis=2)
        values += factor * (
            lgamma(adj_strength)
            - lgamma(float(num_classes))
            - lgamma(adj_alpha).sum(axis=2)
            + ((adj_alpha - 1.0) * (digamma(adj_alpha) - digamma(adj_strength)[:, :, None])).sum(axis=2)
        )
        grads += factor * off * (
            (adj_alpha - 1.0) * trigamma(adj_alpha)
            - ((adj_strength - num_classes) * trigamma(adj_strength))[:, :, None]
        )
    return values, grads


def batched_diversity_terms(evidences: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized diversity_loss values and evidence gradients per sample.

    evidences: (N, M, K).  Returns (values (N,), grads (N, M, K)); the
    gradient with respect to evidence equals the gradient with respect to
    alpha since alpha = e + 1.
    """
    alpha = np.asarray(evidences, dtype=float) + 1.0
    n, m_total, _ = alpha.shape
    strengths = alpha.sum(axis=2, keepdims=True)
    profiles = alpha / strengths
    mean_alpha = alpha.mean(axis=1)
    mean_strength = mean_alpha.sum(axis=1)
    mean_profile = mean_alpha / mean_strength[:, None]

    log_ratio = np.log(profiles) - np.log(mean_profile)[:, None, :]
    kl_terms = (profiles * log_ratio).sum(axis=2, keepdims=True)
    values = -kl_terms[:, :, 0].mean(axis=1)

    own = (log_ratio - kl_terms) / strengths
    shared = (1.0 - profiles.mean(axis=1) / mean_profile) / mean_strength[:, None]
    grads = -(own + shared[:, None, :]) / m_total
    return values, grads


def joint_loss(evidences, labels, traces: list[FusionTrace], cfg: LossConfig) -> float:
    """Gated sum of per-expert losses plus the weighted diversity term.

    evidences: (N, M, K) per-sample per-expert evidence.
    labels: (N, K) one-hot rows.
    traces: per-sample fusion traces computed from the same evidences; the
        gate engages expert m when its prefix weight strictly exceeds the
        threshold.  Expert 0 is always engaged so every sample trains at
        least one expert.
    """
    ev = np.asarray(evidences, dtype=float)
    lab = np.asarray(labels, dtype=float)
    if ev.ndim != 3:
        raise ValueError(f"evidences must have shape (N, M, K), got {ev.shape}")
    n, m_total, num_classes = ev.shape
    if lab.shape != (n, num_classes):
        raise ValueError(
            f"labels shape {lab.shape} does not match evidences {(n, num_classes)}"
        )
    if len(traces) != n:
        raise ValueError(f"need one trace per sample, got {len(traces)} for {n}")

    schedule = cfg.effective_anneal()
    total = 0.0
    for i in range(n):
        weights = traces[i].prefix_weights
        if weights.shape[0] != m_total:
            raise ValueError("trace expert count does not match evidences")
        for m in range(m_total):
            if m == 0 or weights[m] > cfg.gate_threshold:
                total += single_loss(ev[i, m], lab[i], schedule)
        total += cfg.diversity_weight * diversity_loss(ev[i] + 1.0)
    return total
