"""
Training objectives over one candidate pool.
Every loss is a pure function of the pool's logits (and scores / reference
logits) and returns (loss, gradient with respect to the policy logits), so
the training loop can push the gradient into the model with one backward call.
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from src.errors import (
    IndexOutOfRangeError,
    LengthMismatchError,
    MissingReferenceError,
    UnsortedBatchError,
)

LossAndGrad = Tuple[float, np.ndarray]


class LossMode(Enum):
    CE = "CE"
    MR = "MR"
    MR_AS = "MR_AS"
    MR_BS = "MR_BS"
    DPO = "DPO"
    DPO_STAR = "DPO_STAR"
    SIGMA_DPO_STAR = "SIGMA_DPO_STAR"


REFERENCE_MODES = {LossMode.DPO, LossMode.DPO_STAR, LossMode.SIGMA_DPO_STAR}


@dataclass
class LossBatch:
    """
    One site's pool, ordered best-scored first.

    logits[k] belongs to the k-th best candidate; ref_logits (DPO family)
    follow the same order.
    """

    logits: np.ndarray
    scores: np.ndarray
    original_score: float = 0.0
    ref_logits: Optional[np.ndarray] = None
    margin_unit: float = 0.5
    mix_weight: float = 1.0
    dpo_scale: float = 1.0
    bs_confidence: str = "softmax"

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.ref_logits is not None:
            self.ref_logits = np.asarray(self.ref_logits, dtype=np.float64)
        k = len(self.logits)
        if k < 1:
            raise LengthMismatchError("a loss batch needs at least one candidate")
        if len(self.scores) != k or (self.ref_logits is not None and len(self.ref_logits) != k):
            raise LengthMismatchError("logits, scores and ref_logits must share one length")
        if self.margin_unit < 0 or self.mix_weight < 0 or self.dpo_scale <= 0:
            raise ValueError("need margin_unit >= 0, mix_weight >= 0, dpo_scale > 0")
        if self.bs_confidence not in ("softmax", "identity"):
            raise ValueError(f"unknown bs_confidence {self.bs_confidence!r}")

    def __len__(self):
        return len(self.logits)

    def check_sorted(self):
        if np.any(np.diff(self.scores) > 0):
            raise UnsortedBatchError("scores must be non-increasing")


def sort_for_ranking(logits: Sequence[float], scores: Sequence[float]) -> List[int]:
    """
    Permutation putting candidates in non-increasing score order.

    Ties go to the higher logit, then to the lower original index.
    """
    if len(logits) != len(scores):
        raise LengthMismatchError(f"{len(logits)} logits but {len(scores)} scores")
    return sorted(range(len(scores)), key=lambda i: (-scores[i], -logits[i], i))


def make_batch(logits, scores, original_score=0.0, ref_logits=None, **kwargs) -> Tuple[LossBatch, List[int]]:
    """Sort a raw pool into a LossBatch; also returns the permutation used."""
    order = sort_for_ranking(list(logits), list(scores))
    batch = LossBatch(
        logits=np.asarray(logits, dtype=np.float64)[order],
        scores=np.asarray(scores, dtype=np.float64)[order],
        original_score=original_score,
        ref_logits=None if ref_logits is None else np.asarray(ref_logits, dtype=np.float64)[order],
        **kwargs,
    )
    return batch, order


def margin_ranking_loss(batch: LossBatch) -> LossAndGrad:
    """sum_{k<j} max(0, s_j - s_k + margin * (j - k))"""
    batch.check_sorted()
    s = batch.logits
    k = len(s)
    grad = np.zeros(k)
    loss = 0.0
    for better in range(k):
        for worse in range(better + 1, k):
            violation = s[worse] - s[better] + batch.margin_unit * (worse - better)
            # Subgradient 0 at the kink
            if violation > 0:
                loss += violation
                grad[worse] += 1.0
                grad[better] -= 1.0
    return float(loss), grad


def avg_score_loss(batch: LossBatch) -> LossAndGrad:
    """-sum_k softmax(s)_k * M(X~_k)"""
    weights = softmax(batch.logits)
    expected = float(np.dot(weights, batch.scores))
    grad = -weights * (batch.scores - expected)
    return -expected, grad


def _top_confidence(batch: LossBatch) -> Tuple[float, np.ndarray]:
    """f(s_1) and its gradient with respect to the logits."""
    if batch.bs_confidence == "identity":
        grad = np.zeros(len(batch))
        grad[0] = 1.0
        return float(batch.logits[0]), grad
    weights = softmax(batch.logits)
    grad = -weights[0] * weights
    grad[0] += weights[0]
    return float(weights[0]), grad


def best_score_loss(batch: LossBatch) -> LossAndGrad:
    """max(0, (M(X) - M(X~_1)) * f(s_1))"""
    deficit = batch.original_score - batch.scores[0]
    confidence, confidence_grad = _top_confidence(batch)
    value = deficit * confidence
    if value > 0:
        return float(value), deficit * confidence_grad
    return 0.0, np.zeros(len(batch))


def combined_loss(batch: LossBatch, mode: LossMode) -> LossAndGrad:
    """MR plus gamma times AS (MR_AS) or BS (MR_BS)."""
    mr_loss, mr_grad = margin_ranking_loss(batch)
    if batch.mix_weight == 0:
        return mr_loss, mr_grad
    if mode is LossMode.MR_AS:
        extra_loss, extra_grad = avg_score_loss(batch)
    elif mode is LossMode.MR_BS:
        extra_loss, extra_grad = best_score_loss(batch)
    else:
        raise ValueError(f"combined_loss takes MR_AS or MR_BS, not {mode}")
    return mr_loss + batch.mix_weight * extra_loss, mr_grad + batch.mix_weight * extra_grad


def dpo_pl_loss(policy_logliks: Sequence[float], ref_logliks: Sequence[float], delta: float = 1.0) -> LossAndGrad:
    """
    Plackett-Luce preference loss over a ranking, preferred first.

    -sum_k [delta r_k - log sum_{j>=k} exp(delta r_j)], r = policy - reference.
    The gradient is with respect to the policy log-likelihoods.
    """
    policy = np.asarray(policy_logliks, dtype=np.float64)
    reference = np.asarray(ref_logliks, dtype=np.float64)
    if len(policy) != len(reference):
        raise LengthMismatchError(f"{len(policy)} policy values but {len(reference)} reference values")
    if len(policy) < 1:
        raise LengthMismatchError("dpo_pl_loss needs at least one candidate")

    z = delta * (policy - reference)
    # suffix_lse[k] = log sum_{j>=k} exp(z_j)
    suffix_lse = np.logaddexp.accumulate(z[::-1])[::-1]
    loss = float(-np.sum(z - suffix_lse))

    k = len(z)
    grad_z = -np.ones(k)
    for stage in range(k):
        grad_z[stage:] += np.exp(z[stage:] - suffix_lse[stage])
    return loss, delta * grad_z


def _adjacent_margins(batch: LossBatch) -> np.ndarray:
    if batch.ref_logits is None:
        raise MissingReferenceError("this loss needs reference logits")
    batch.check_sorted()
    d = batch.logits - batch.ref_logits
    return d[:-1] - d[1:]


def _spread_pair_grad(pair_grad: np.ndarray) -> np.ndarray:
    """Map d/d(margin_k) onto the logits: +1 on s_k, -1 on s_{k+1}."""
    grad = np.zeros(len(pair_grad) + 1)
    grad[:-1] += pair_grad
    grad[1:] -= pair_grad
    return grad


def dpo_star_loss(batch: LossBatch) -> LossAndGrad:
    """-sum_k (s_k - s^_k - s_{k+1} + s^_{k+1})"""
    margins = _adjacent_margins(batch)
    return float(-np.sum(margins)), _spread_pair_grad(-np.ones(len(margins)))


def sigma_dpo_star_loss(batch: LossBatch) -> LossAndGrad:
    """-sum_k log sigmoid(s_k - s^_k - s_{k+1} + s^_{k+1})"""
    margins = _adjacent_margins(batch)
    # -log sigmoid(x) = log(1 + exp(-x))
    loss = float(np.sum(np.logaddexp(0.0, -margins)))
    return loss, _spread_pair_grad(-expit(-margins))


def cross_entropy_best(logits: Sequence[float], best_index: int) -> LossAndGrad:
    """-log softmax(logits)[best_index]"""
    s = np.asarray(logits, dtype=np.float64)
    if not 0 <= best_index < len(s):
        raise IndexOutOfRangeError(f"best_index {best_index} outside [0, {len(s)})")
    log_probs = log_softmax(s)
    grad = np.exp(log_probs)
    grad[best_index] -= 1.0
    return float(-log_probs[best_index]), grad


def compute_loss(batch: LossBatch, mode: LossMode) -> LossAndGrad:
    """Evaluate one training objective on a sorted batch."""
    if mode is LossMode.CE:
        return cross_entropy_best(batch.logits, 0)
    if mode is LossMode.MR:
        return margin_ranking_loss(batch)
    if mode in (LossMode.MR_AS, LossMode.MR_BS):
        return combined_loss(batch, mode)
    if mode is LossMode.DPO:
        if batch.ref_logits is None:
            raise MissingReferenceError("DPO needs reference logits")
        batch.check_sorted()
        return dpo_pl_loss(batch.logits, batch.ref_logits, batch.dpo_scale)
    if mode is LossMode.DPO_STAR:
        return dpo_star_loss(batch)
    if mode is LossMode.SIGMA_DPO_STAR:
        return sigma_dpo_star_loss(batch)
    raise ValueError(f"unknown loss mode {mode}")
