import math

import numpy as np
import pytest

from src.candidates import SamplingPlan
from src.core import Action, CandidatePool, tokenize
from src.errors import MissingOriginalProbError
from src.subst import decide, suggest, suggestion_record, suggestions_from_records, top2

WORDS = ["crucial", "vital", "key", "critical", "essential", "major"]


def make_pool(candidates, probabilities, original_probability, text="it was critical", position=2):
    site = tokenize(text).site(position)
    return CandidatePool(
        site=site,
        candidates=tuple(candidates),
        logits=tuple(math.log(p) if p > 0 else -1e9 for p in probabilities),
        probabilities=tuple(probabilities),
        original_probability=original_probability,
    )


def test_replace_when_candidate_beats_original():
    decision = decide(make_pool(["crucial", "vital"], [0.5, 0.2], 0.3))
    assert decision.action is Action.REPLACE
    assert decision.replacement == "crucial"
    assert decision.chosen_probability == 0.5
    assert decision.original_probability == 0.3


def test_keep_when_original_is_top():
    decision = decide(make_pool(["critical", "crucial"], [0.6, 0.3], 0.6))
    assert decision.action is Action.KEEP
    assert decision.replacement is None


def test_keep_on_probability_tie():
    assert decide(make_pool(["crucial", "vital"], [0.3, 0.2], 0.3)).action is Action.KEEP


def test_original_in_pool_is_skipped():
    decision = decide(make_pool(["critical", "crucial"], [0.5, 0.4], 0.2))
    assert decision.replacement == "crucial"


def test_replacement_takes_the_original_case():
    decision = decide(make_pool(["crucial"], [0.7], 0.1, text="Critical results", position=0))
    assert decision.replacement == "Crucial"


def test_pool_without_original_probability():
    with pytest.raises(MissingOriginalProbError):
        decide(make_pool(["crucial"], [0.7], None))


def test_decide_matches_rule_on_random_pools():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        k = int(rng.integers(1, 6))
        words = list(rng.choice(WORDS, size=k, replace=False))
        probabilities = sorted(rng.dirichlet(np.ones(k + 1))[:k], reverse=True)
        original = float(rng.uniform(0, 0.5))
        if "critical" in words:
            original = probabilities[words.index("critical")]
        decision = decide(make_pool(words, probabilities, original))

        substitutes = [p for w, p in zip(words, probabilities) if w != "critical"]
        should_replace = bool(substitutes) and max(substitutes) > original
        assert (decision.action is Action.REPLACE) == should_replace
        if should_replace:
            assert decision.replacement != "critical"
            assert decision.chosen_probability == max(substitutes)


def test_top2():
    assert top2(make_pool(["critical", "crucial", "vital", "key"], [0.4, 0.3, 0.2, 0.1], 0.4)) == "vital"
    assert top2(make_pool(["crucial", "vital"], [0.5, 0.2], 0.1)) == "vital"
    assert top2(make_pool(["critical", "crucial"], [0.6, 0.3], 0.6)) is None
    assert top2(make_pool(["crucial"], [0.6], 0.1)) is None


def test_suggest_covers_every_eligible_site_in_order(masked_model):
    sentence = tokenize("The cat sat on the mat.")
    results = suggest(sentence, masked_model, pool_size=3)
    assert [site.position for site, _, _ in results] == [0, 1, 2, 3, 4, 5]
    for site, decision, pool in results:
        assert decision.site == site
        assert len(pool) == 3
        if decision.action is Action.REPLACE:
            assert decision.replacement.casefold() != site.original_token.casefold()


def test_suggest_with_sampling_plan(masked_model):
    sentence = tokenize("The cat sat on the mat.")
    results = suggest(sentence, masked_model, plan=SamplingPlan(sites_per_sentence=2, pool_size=4))
    assert len(results) == 2
    assert all(len(pool) == 4 for _, _, pool in results)


def test_suggest_without_eligible_sites(masked_model):
    assert suggest(tokenize("a , !"), masked_model) == []
    assert suggest(tokenize("a , !"), masked_model, plan=SamplingPlan()) == []


def test_suggestion_records_round_trip():
    pool = make_pool(["crucial", "vital"], [0.5, 0.2], 0.3)
    decision = decide(pool)
    record = suggestion_record("s1", pool.site, decision, pool)
    assert record == {
        "sentence_id": "s1",
        "position": 2,
        "original": "critical",
        "action": "replace",
        "replacement": "crucial",
        "candidates": [{"token": "crucial", "prob": 0.5}, {"token": "vital", "prob": 0.2}],
    }

    ((site, rebuilt, rebuilt_pool),) = suggestions_from_records(pool.site.sentence, [record])
    assert site.position == 2
    assert rebuilt.action is Action.REPLACE
    assert rebuilt.replacement == "crucial"
    assert rebuilt_pool.candidates == ("crucial", "vital")
    assert rebuilt_pool.probabilities == (0.5, 0.2)


def test_suggestions_from_records_checks_the_original():
    sentence = tokenize("it was critical")
    record = {"sentence_id": "s1", "position": 2, "original": "vital", "action": "keep",
              "replacement": None, "candidates": []}
    with pytest.raises(ValueError):
        suggestions_from_records(sentence, [record])
