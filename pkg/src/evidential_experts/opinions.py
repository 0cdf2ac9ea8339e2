"""Opinion algebra over evidence vectors.

An evidence vector e (non-negative, length K >= 2) induces a Dirichlet
opinion with parameters alpha = e + 1, strength S = sum(alpha), per-class
belief masses b_k = e_k / S and an uncertainty mass u = K / S.  Belief and
uncertainty always partition the unit of mass: u + sum(b) = 1.

Opinions from several experts are combined pairwise by discounting the
product of uncertainties by the conflict between their beliefs, folded
sequentially over the expert list.  The partial combinations double as
prefix weights: the weight of expert m is the combined uncertainty of all
experts before it, so a confident prefix suppresses later experts.  Fusion
of the raw evidence vectors is a softmax-weighted average of the experts'
evidence under a temperature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import check_evidence_matrix, check_evidence_vector


class TotalConflictError(ArithmeticError):
    """A combination step would divide by a non-positive (1 - conflict).

    Unreachable for finite evidence (uncertainties are strictly positive, so
    the conflict stays strictly below 1), but guarded explicitly.
    """


@dataclass(frozen=True, eq=False)
class DirichletOpinion:
    """One expert's view: evidence with its derived belief decomposition."""

    evidence: np.ndarray
    alpha: np.ndarray
    strength: float
    belief: np.ndarray
    uncertainty: float

    @property
    def num_classes(self) -> int:
        return self.evidence.shape[0]


@dataclass(frozen=True, eq=False)
class FusionTrace:
    """Combination record for a group of experts on one sample.

    conflicts[m] is the belief conflict between raw opinions m and m-1
    (conflicts[0] = 0), prefix_weights[m] is the combined uncertainty of
    opinions 0..m-1 (prefix_weights[0] = 1), and joint_uncertainty is the
    combined uncertainty of the whole group.
    """

    conflicts: np.ndarray
    joint_uncertainty: float
    prefix_weights: np.ndarray

    @property
    def num_experts(self) -> int:
        return self.conflicts.shape[0]


@dataclass(frozen=True)
class FusionConfig:
    """Evidence-fusion settings: softmax temperature and expert budget."""

    temperature: float = 0.1
    max_experts: int = 3

    def __post_init__(self):
        if not np.isfinite(self.temperature) or self.temperature <= 0.0:
            raise ValueError("temperature must be positive and finite")
        if int(self.max_experts) != self.max_experts or self.max_experts < 1:
            raise ValueError("max_experts must be an integer >= 1")


def opinion_from_evidence(e) -> DirichletOpinion:
    """Build the Dirichlet opinion induced by an evidence vector."""
    ev = check_evidence_vector(e)
    alpha = ev + 1.0
    strength = float(alpha.sum())
    belief = ev / strength
    uncertainty = ev.shape[0] / strength
    return DirichletOpinion(ev, alpha, strength, belief, uncertainty)


def _conflict(belief_a: np.ndarray, belief_b: np.ndarray) -> float:
    # sum_{i != j} a_i b_j == (sum a)(sum b) - a . b; symmetric in a, b.
    return float(belief_a.sum() * belief_b.sum() - belief_a @ belief_b)


def combine_pair(o1: DirichletOpinion, o2: DirichletOpinion) -> tuple[float, float]:
    """Combine two opinions; returns (combined uncertainty, conflict factor)."""
    if o1.num_classes != o2.num_classes:
        raise ValueError(
            f"opinions disagree on class count: {o1.num_classes} vs {o2.num_classes}"
        )
    conflict = _conflict(o1.belief, o2.belief)
    denom = 1.0 - conflict
    if denom <= 0.0:
        raise TotalConflictError("total conflict: 1 - C is not positive")
    return o1.uncertainty * o2.uncertainty / denom, conflict


def combine_sequential(opinions: list[DirichletOpinion]) -> FusionTrace:
    """Fold the pairwise rule over an expert list, recording the trace.

    Conflicts are taken between consecutive raw opinions, not against the
    running combination.  The running combined uncertainty before opinion m
    is exactly the prefix weight of expert m.
    """
    if len(opinions) == 0:
        raise ValueError("at least one opinion is required")
    num_classes = opinions[0].num_classes
    for op in opinions[1:]:
        if op.num_classes != num_classes:
            raise ValueError("all opinions must share the same class count")

    m_total = len(opinions)
    conflicts = np.zeros(m_total)
    weights = np.ones(m_total)
    running = opinions[0].uncertainty
    for m in range(1, m_total):
        conflicts[m] = _conflict(opinions[m].belief, opinions[m - 1].belief)
        weights[m] = running
        denom = 1.0 - conflicts[m]
        if denom <= 0.0:
            raise TotalConflictError("total conflict: 1 - C is not positive")
        running = running * opinions[m].uncertainty / denom
    return FusionTrace(conflicts, running, weights)


def prefix_weights(opinions: list[DirichletOpinion]) -> np.ndarray:
    """Prefix weight of each expert: w[0] = 1, then the running combination."""
    return combine_sequential(opinions).prefix_weights


def fuse_evidence(evidences, weights, cfg: FusionConfig) -> np.ndarray:
    """Softmax-weighted average of expert evidence vectors.

    The mixing coefficients are softmax(w / temperature); a low temperature
    sharpens the suppression of experts with low prefix weights.  Shifting
    all weights by a constant leaves the result unchanged.
    """
    ev = check_evidence_matrix(evidences)
    w = np.asarray(weights, dtype=float)
    if w.shape != (ev.shape[0],):
        raise ValueError(
            f"need one weight per evidence vector, got {w.shape} for {ev.shape[0]}"
        )
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    scaled = w / cfg.temperature
    scaled -= scaled.max()
    coef = np.exp(scaled)
    coef /= coef.sum()
    return coef @ ev


def predict(fused_evidence) -> tuple[int, float, np.ndarray]:
    """Class decision from fused evidence: (argmax class, uncertainty, probs).

    Ties resolve to the lowest class index; probs are the normalized
    Dirichlet parameters alpha / S.
    """
    op = opinion_from_evidence(fused_evidence)
    probs = op.alpha / op.strength
    return int(np.argmax(op.evidence)), op.uncertainty, probs


def batched_beliefs(evidence: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Uncertainty and belief masses for evidence of shape (..., K).

    Returns (u with shape (...,), b with shape (..., K)).
    """
    ev = np.asarray(evidence, dtype=float)
    num_classes = ev.shape[-1]
    strength = ev.sum(axis=-1) + num_classes
    return num_classes / strength, ev / strength[..., None]


def batched_fusion_trace(evidence: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized trace over a batch: evidence (N, M, K).

    Returns (joint uncertainty (N,), prefix weights (N, M), conflicts (N, M)),
    sample-by-sample identical to combine_sequential on the row's opinions.
    """
    ev = np.asarray(evidence, dtype=float)
    if ev.ndim != 3:
        raise ValueError(f"expected evidence of shape (N, M, K), got {ev.shape}")
    n, m_total, _ = ev.shape
    u, b = batched_beliefs(ev)

    conflicts = np.zeros((n, m_total))
    if m_total > 1:
        committed = 1.0 - u
        cross = np.einsum("nmk,nmk->nm", b[:, 1:, :], b[:, :-1, :])
        conflicts[:, 1:] = committed[:, 1:] * committed[:, :-1] - cross

    weights = np.ones((n, m_total))
    running = u[:, 0].copy()
    for m in range(1, m_total):
        weights[:, m] = running
        denom = 1.0 - conflicts[:, m]
        if np.any(denom <= 0.0):
            raise TotalConflictError("total conflict: 1 - C is not positive")
        running = running * u[:, m] / denom
    return running, weights, conflicts
