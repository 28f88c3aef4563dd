"""
Prediction-score alignment and substitution-quality metrics.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.core import CandidatePool, ScoreRecord
from src.errors import EmptyInputError, LengthMismatchError, ZeroOriginalScoreError, ZeroVectorError

DEFAULT_BINS = 50


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatchError(f"vectors of length {len(a)} and {len(b)}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0 or norm_b == 0:
        raise ZeroVectorError("cosine similarity is undefined for an all-zero vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def cs(pool: CandidatePool, record: ScoreRecord, renormalized: bool = False) -> float:
    """
    Cosine similarity between the pool's log-probabilities and the scores of
    the sentences each candidate produces.

    Args:
        pool: Candidate pool with K >= 2
        record: Scores aligned with the pool
        renormalized: Use probabilities normalized over the pool itself
    """
    record.check_aligned(pool)
    if len(pool) < 2:
        raise LengthMismatchError("CS needs at least two candidates")
    if renormalized:
        pool = pool.renormalized()
    probabilities = np.asarray(pool.probabilities, dtype=np.float64)
    if np.any(probabilities <= 0):
        raise ValueError("CS needs strictly positive probabilities")
    return cosine_similarity(np.log(probabilities), record.candidate_scores)


def abr(record: ScoreRecord) -> float:
    """Mean of M(X~_k) / M(X) over the pool."""
    if record.original_score == 0:
        raise ZeroOriginalScoreError("ABR divides by the original score, which is 0")
    if len(record.candidate_scores) == 0:
        raise EmptyInputError("ABR needs at least one candidate score")
    return float(np.mean(np.asarray(record.candidate_scores, dtype=np.float64) / record.original_score))


def top2_ratio(original_score: float, top2_score: float) -> float:
    if original_score == 0:
        raise ZeroOriginalScoreError("top-2 ratio divides by the original score, which is 0")
    return top2_score / original_score


@dataclass(frozen=True)
class Summary:
    median: float
    mean: float
    sd: float
    n: int
    histogram: List[Tuple[float, float, int]] = field(default_factory=list)

    def to_dict(self):
        return {"median": self.median, "mean": self.mean, "sd": self.sd, "n": self.n}


def aggregate(values: Sequence[float], bins: int = DEFAULT_BINS,
              value_range: Optional[Tuple[float, float]] = None) -> Summary:
    """
    Median (lower middle for even counts), mean, population SD and histogram.

    The histogram has `bins` uniform bins over `value_range`, by default the
    observed range.
    """
    if len(values) == 0:
        raise EmptyInputError("aggregate needs at least one value")
    data = np.sort(np.asarray(values, dtype=np.float64))
    median = float(data[(len(data) - 1) // 2])
    counts, edges = np.histogram(data, bins=bins, range=value_range)
    histogram = [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]
    return Summary(
        median=median,
        mean=float(np.mean(data)),
        sd=float(np.std(data)),
        n=len(data),
        histogram=histogram,
    )
