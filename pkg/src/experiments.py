"""
Pipelines that bind pools, scorer and metrics together.
Used by training (held-out CS), the evaluate and stat commands.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from tqdm import tqdm

from src.candidates import MaskedSubstitutionModel, SamplingPlan, build_candidate_pool, sample_token_sites
from src.core import AnnotatedToken, CandidatePool, ScoreRecord, TokenSite, apply_substitution, match_case
from src.data import DatasetRecord
from src.errors import NoEligibleSitesError
from src.metrics import Summary, abr, aggregate, cs, top2_ratio
from src.scorer import SentenceScorer
from src.stats import (
    DEFAULT_ALPHA,
    GroupLabel,
    group_counts,
    pvalue_for_ranked_scores,
    significance_by_group,
    significance_proportion,
    stratification_table,
    stratify,
)
from src.subst import Suggestion, suggest, top2

logger = logging.getLogger(__name__)


def score_pool(scorer: SentenceScorer, site: TokenSite, pool: CandidatePool,
               limit: Optional[int] = None) -> ScoreRecord:
    """
    Score the sentence each candidate produces, plus M(X) = score(X, X).

    Candidates are case-matched to the original token before splicing. With
    `limit`, only the first `limit` candidates are scored.
    """
    sentence = site.sentence
    candidates = pool.candidates[:limit] if limit else pool.candidates
    modified = [apply_substitution(sentence, site, match_case(c, site.original_token)) for c in candidates]
    original_score = scorer.score(sentence, sentence)
    scores = scorer.score_batch(sentence, modified)
    return ScoreRecord(original_score=original_score, candidate_scores=tuple(scores), scorer_id=scorer.scorer_id)


@dataclass
class EvaluationResult:
    cs_values: List[float] = field(default_factory=list)
    abr_values: List[float] = field(default_factory=list)
    top2_values: List[float] = field(default_factory=list)
    n_tokens: int = 0
    n_excluded: int = 0
    n_skipped_sentences: int = 0

    def summaries(self) -> Dict[str, Optional[Summary]]:
        return {
            "cs": aggregate(self.cs_values) if self.cs_values else None,
            "abr": aggregate(self.abr_values) if self.abr_values else None,
            "top2": aggregate(self.top2_values) if self.top2_values else None,
        }

    def add(self, pool: CandidatePool, record: ScoreRecord, renormalized: bool = False):
        self.n_tokens += 1
        self.abr_values.append(abr(record))
        if len(pool) < 2:
            # CS of a single candidate is degenerate
            self.n_excluded += 1
            return
        self.cs_values.append(cs(pool, record, renormalized=renormalized))
        second = top2(pool)
        if second is not None:
            index = pool.candidates.index(second)
            self.top2_values.append(top2_ratio(record.original_score, record.candidate_scores[index]))


def evaluate_model(model: MaskedSubstitutionModel, scorer: SentenceScorer, records: Sequence[DatasetRecord],
                   plan: SamplingPlan, renormalized: bool = False, progress: bool = False) -> EvaluationResult:
    """CS, ABR and top-2 ratio over the sampled sites of every record."""
    result = EvaluationResult()
    iterator = tqdm(records, desc="Evaluating", unit="sent") if progress else records
    for index, record in enumerate(iterator):
        try:
            sites = sample_token_sites(record.sentence, plan, salt=(index,), model=model)
        except NoEligibleSitesError:
            result.n_skipped_sentences += 1
            continue
        for site in sites:
            pool = build_candidate_pool(model, site, plan.pool_size)
            result.add(pool, score_pool(scorer, site, pool), renormalized=renormalized)
    if result.n_skipped_sentences:
        logger.warning(f"⚠️  {result.n_skipped_sentences} sentences had no eligible site")
    return result


def evaluate_pools(scorer: SentenceScorer, pools: Sequence[CandidatePool]) -> EvaluationResult:
    """Evaluate externally produced pools (e.g. LLM suggestions)."""
    result = EvaluationResult()
    for pool in pools:
        result.add(pool, score_pool(scorer, pool.site, pool))
    return result


@dataclass
class TokenStat:
    sentence_id: str
    position: int
    group: GroupLabel
    p_value: Optional[float]


@dataclass
class StatisticResult:
    tokens: List[TokenStat]
    counts: Dict[GroupLabel, int]
    table: Dict[str, Dict[str, float]]
    significance: Dict[str, Optional[float]]
    overall_significance: Optional[float]
    k_s: int
    alpha: float

    @property
    def p_values(self) -> List[float]:
        return [t.p_value for t in self.tokens if t.p_value is not None]


Predictor = Callable[[DatasetRecord], List[Suggestion]]
# Builds the k_s-candidate pool a site's p-value is taken over
ReferencePoolBuilder = Callable[[TokenSite, int], CandidatePool]


def model_predictor(model: MaskedSubstitutionModel, plan: Optional[SamplingPlan] = None) -> Predictor:
    return lambda record: suggest(record.sentence, model, plan)


def model_reference_pool(model: MaskedSubstitutionModel) -> ReferencePoolBuilder:
    """Top-k_s admissible items at a site, independent of the decision pool size."""
    return lambda site, k_s: build_candidate_pool(model, site, k_s)


def run_statistic(predictor: Predictor, scorer: SentenceScorer, records: Sequence[DatasetRecord],
                  k_s: int, alpha: float = DEFAULT_ALPHA, min_alternatives: int = 2,
                  progress: bool = False,
                  reference_pool: Optional[ReferencePoolBuilder] = None) -> StatisticResult:
    """
    Group every predicted or annotated token and test its top candidate.

    The p-value compares the score of a pool's first candidate with the scores
    of the next k_s - 1 candidates; tokens without a usable pool get None.
    With `reference_pool` the p-value pool of each predicted site is rebuilt
    with k_s candidates; otherwise (suggestion files, LLM answers) the decision
    pool is cut to k_s. Annotated tokens the predictor did not visit count as model-kept.
    """
    tokens: List[TokenStat] = []
    iterator = tqdm(records, desc="Statistic", unit="sent") if progress else records
    for record in iterator:
        visited = set()
        for site, decision, pool in predictor(record):
            visited.add(site.position)
            token = AnnotatedToken(site, record.suggestions_at(site.position), decision)
            p_value = None
            if pool is not None and reference_pool is not None:
                pool = reference_pool(site, k_s)
            if pool is not None and len(pool) >= 2:
                scores = score_pool(scorer, site, pool, limit=k_s).candidate_scores
                result = pvalue_for_ranked_scores(scores, k_s, min_alternatives)
                p_value = result.p_value if result is not None else None
            tokens.append(TokenStat(record.sentence_id, site.position, stratify(token), p_value))
        for annotation in record.annotations:
            position = annotation.target_position
            if position in visited:
                continue
            visited.add(position)
            token = AnnotatedToken(record.sentence.site(position), record.suggestions_at(position), None)
            tokens.append(TokenStat(record.sentence_id, position, stratify(token), None))

    labels = [t.group for t in tokens]
    p_values = [t.p_value for t in tokens]
    counts = group_counts(labels)
    defined = [p for p in p_values if p is not None]
    return StatisticResult(
        tokens=tokens,
        counts=counts,
        table=stratification_table(counts),
        significance=significance_by_group(labels, p_values, alpha),
        overall_significance=significance_proportion(defined, alpha) if defined else None,
        k_s=k_s,
        alpha=alpha,
    )
