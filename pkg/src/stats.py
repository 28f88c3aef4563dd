"""
Statistics over model-based scores.
The reference-distribution p-value of a top candidate, significance
proportions, agreement strata between model and annotators, and rank
correlation between scorers.
"""

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from scipy import stats as scipy_stats

from src.core import Action, AnnotatedToken
from src.errors import ConstantInputError, EmptyInputError, EmptyReferenceError, LengthMismatchError

DEFAULT_ALPHA = 0.01
# Cross-model benchmark and deep statistic
K_S_PRESETS = {"benchmark": 3, "deep": 1000}


@dataclass(frozen=True)
class PValueResult:
    p_value: float
    k_s: int
    target_score: float
    n_exceeding: int


class GroupLabel(Enum):
    CA = "CA"    # both changed, model's choice among the annotators'
    CD = "CD"    # both changed, different choices
    NCA = "NCA"  # neither changed
    OMC = "OMC"  # only the model changed
    OAC = "OAC"  # only the annotator changed


def reference_pvalue(target_score: float, reference_scores: Sequence[float]) -> PValueResult:
    """
    Fraction of reference scores strictly above the target score.

    Args:
        target_score: Score of the candidate under test
        reference_scores: Scores of the K_s - 1 alternative substitutions

    Returns:
        PValueResult with p = n_exceeding / (K_s - 1)
    """
    if len(reference_scores) == 0:
        raise EmptyReferenceError("reference_pvalue needs at least one reference score")
    for score in reference_scores:
        if not math.isfinite(score):
            raise ValueError(f"non-finite reference score {score}")
    n_exceeding = sum(1 for score in reference_scores if score > target_score)
    n_reference = len(reference_scores)
    return PValueResult(
        p_value=n_exceeding / n_reference,
        k_s=n_reference + 1,
        target_score=target_score,
        n_exceeding=n_exceeding,
    )


def pool_pvalue(scores: Sequence[float]) -> PValueResult:
    """scores[0] is the top candidate; the rest form its reference set."""
    if len(scores) == 0:
        raise EmptyInputError("pool_pvalue needs at least one score")
    return reference_pvalue(scores[0], list(scores[1:]))


def pvalue_for_ranked_scores(scores: Sequence[float], k_s: int, min_alternatives: int = 2) -> Optional[PValueResult]:
    """
    p-value of the first (top-ranked) candidate against the rest of its pool.

    The pool is truncated to `k_s` candidates; pools with fewer than
    `min_alternatives` alternatives left yield None (token skipped).
    """
    truncated = list(scores[:k_s])
    if len(truncated) - 1 < max(1, min_alternatives):
        return None
    return pool_pvalue(truncated)


def significance_proportion(p_values: Sequence[float], alpha: float = DEFAULT_ALPHA) -> float:
    """Fraction of p-values strictly below alpha."""
    if len(p_values) == 0:
        raise EmptyInputError("significance_proportion needs at least one p-value")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    for p in p_values:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p-value {p} outside [0, 1]")
    return sum(1 for p in p_values if p < alpha) / len(p_values)


def stratify(token: AnnotatedToken) -> GroupLabel:
    """Place one token in exactly one of the five agreement groups."""
    annotator_changed = bool(token.annotator_suggestions)
    decision = token.model_decision
    model_changed = decision is not None and decision.action is Action.REPLACE

    if not annotator_changed and not model_changed:
        return GroupLabel.NCA
    if annotator_changed and not model_changed:
        return GroupLabel.OAC
    if model_changed and not annotator_changed:
        return GroupLabel.OMC
    suggestions = {s.casefold() for s in token.annotator_suggestions}
    if decision.replacement.casefold() in suggestions:
        return GroupLabel.CA
    return GroupLabel.CD


def group_counts(labels: Iterable[GroupLabel]) -> Dict[GroupLabel, int]:
    counts = Counter(labels)
    return {label: counts.get(label, 0) for label in GroupLabel}


def stratification_table(counts: Mapping[GroupLabel, int]) -> Dict[str, Dict[str, float]]:
    """
    Row-normalized agreement table.

    Rows are annotator behaviour; each row's proportions sum to 1 unless the
    row is empty, in which case they are all 0.
    """
    changed = {label: counts.get(label, 0) for label in (GroupLabel.OAC, GroupLabel.CA, GroupLabel.CD)}
    kept = {label: counts.get(label, 0) for label in (GroupLabel.NCA, GroupLabel.OMC)}

    def normalize(row):
        total = sum(row.values())
        return {label.value: (count / total if total else 0.0) for label, count in row.items()}

    return {"annotator_changed": normalize(changed), "annotator_kept": normalize(kept)}


def significance_by_group(
    labels: Sequence[GroupLabel],
    p_values: Sequence[Optional[float]],
    alpha: float = DEFAULT_ALPHA,
) -> Dict[str, Optional[float]]:
    """Per-group proportion of defined p-values below alpha (None for empty groups)."""
    if len(labels) != len(p_values):
        raise LengthMismatchError("labels and p_values differ in length")
    by_group: Dict[GroupLabel, List[float]] = {label: [] for label in GroupLabel}
    for label, p in zip(labels, p_values):
        if p is not None:
            by_group[label].append(p)
    return {
        label.value: (significance_proportion(values, alpha) if values else None)
        for label, values in by_group.items()
    }


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties."""
    if len(a) != len(b):
        raise LengthMismatchError(f"lengths {len(a)} and {len(b)} differ")
    if len(a) < 2:
        raise LengthMismatchError("spearman needs at least two pairs")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise ConstantInputError("rank correlation is undefined for a constant input")
    rho, _ = scipy_stats.spearmanr(a, b)
    return float(rho)
