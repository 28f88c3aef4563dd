"""
Inference-time substitution engine.
Applies the replace-or-keep rule to candidate pools and extracts the top-2
substitute used in evaluation.
"""

import math
from typing import Any, Dict, List, Optional, Tuple

from src.candidates import (
    MaskedSubstitutionModel,
    SamplingPlan,
    build_candidate_pool,
    eligible_positions,
    sample_token_sites,
)
from src.core import (
    Action,
    CandidatePool,
    Sentence,
    SubstitutionDecision,
    TokenSite,
    match_case,
)
from src.errors import MissingOriginalProbError

DEFAULT_POOL_SIZE = 5

Suggestion = Tuple[TokenSite, SubstitutionDecision, Optional[CandidatePool]]


def _ranked_indices(pool: CandidatePool) -> List[int]:
    # Highest probability first; ties keep pool order
    return sorted(range(len(pool)), key=lambda i: (-pool.probabilities[i], i))


def decide(pool: CandidatePool) -> SubstitutionDecision:
    """
    Replace iff the most probable candidate other than the original token is
    strictly more probable than the original token.
    """
    if pool.original_probability is None:
        raise MissingOriginalProbError(
            f"pool for {pool.site.original_token!r} carries no original-token probability"
        )
    original = pool.site.original_token
    for i in _ranked_indices(pool):
        candidate = pool.candidates[i]
        if candidate.casefold() == original.casefold():
            continue
        probability = pool.probabilities[i]
        if probability > pool.original_probability:
            return SubstitutionDecision(
                site=pool.site,
                action=Action.REPLACE,
                replacement=match_case(candidate, original),
                chosen_probability=probability,
                original_probability=pool.original_probability,
            )
        break
    return SubstitutionDecision(
        site=pool.site,
        action=Action.KEEP,
        replacement=None,
        chosen_probability=pool.original_probability,
        original_probability=pool.original_probability,
    )


def suggest(sentence: Sentence, model: MaskedSubstitutionModel, plan: Optional[SamplingPlan] = None,
            pool_size: int = DEFAULT_POOL_SIZE) -> List[Suggestion]:
    """
    Pool and decision for every eligible site, or for the sites the plan samples.

    Results follow token order; a sentence with no eligible site gives [].
    """
    if plan is None:
        sites = [sentence.site(p) for p in eligible_positions(sentence, model=model)]
        k = pool_size
    else:
        if not eligible_positions(sentence, plan.eligibility_filter, model):
            return []
        sites = sample_token_sites(sentence, plan, model=model)
        k = plan.pool_size

    results = []
    for site in sites:
        pool = build_candidate_pool(model, site, k)
        results.append((site, decide(pool), pool))
    return results


def top2(pool: CandidatePool) -> Optional[str]:
    """Second most probable candidate distinct from the original token."""
    original = pool.site.original_token.casefold()
    substitutes = [pool.candidates[i] for i in _ranked_indices(pool)
                   if pool.candidates[i].casefold() != original]
    return substitutes[1] if len(substitutes) >= 2 else None


def suggestion_record(sentence_id: str, site: TokenSite, decision: SubstitutionDecision,
                      pool: Optional[CandidatePool]) -> Dict[str, Any]:
    """One JSON-lines record of the suggestion output."""
    candidates = []
    if pool is not None:
        candidates = [{"token": token, "prob": prob} for token, prob in zip(pool.candidates, pool.probabilities)]
    return {
        "sentence_id": sentence_id,
        "position": site.position,
        "original": site.original_token,
        "action": decision.action.value,
        "replacement": decision.replacement,
        "candidates": candidates,
    }


def suggestions_from_records(sentence: Sentence, records: List[Dict[str, Any]]) -> List[Suggestion]:
    """
    Rebuild (site, decision, pool) triples from suggestion records of one sentence.

    Pools take the stored order; probabilities are kept and logits are their logs.
    """
    results = []
    for record in sorted(records, key=lambda r: r["position"]):
        site = sentence.site(int(record["position"]))
        if site.original_token != record["original"]:
            raise ValueError(
                f"record says {record['original']!r} at position {site.position}, sentence has {site.original_token!r}"
            )
        candidates = record.get("candidates") or []
        pool = None
        if candidates:
            probabilities = tuple(float(c["prob"]) for c in candidates)
            pool = CandidatePool(
                site=site,
                candidates=tuple(c["token"] for c in candidates),
                logits=tuple(math.log(max(p, 1e-300)) for p in probabilities),
                probabilities=probabilities,
                original_probability=0.0,
            )
        if record["action"] == Action.REPLACE.value:
            chosen = pool.probability_of(record["replacement"]) if pool is not None else None
            decision = SubstitutionDecision(site, Action.REPLACE, record["replacement"], chosen or 1.0, 0.0)
        else:
            decision = SubstitutionDecision(site, Action.KEEP, None, 0.0, 0.0)
        results.append((site, decision, pool))
    return results
