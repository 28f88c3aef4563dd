import numpy as np
import pytest

from src.core import Action, AnnotatedToken, SubstitutionDecision, tokenize
from src.errors import ConstantInputError, EmptyInputError, EmptyReferenceError, LengthMismatchError
from src.stats import (
    GroupLabel,
    group_counts,
    pool_pvalue,
    pvalue_for_ranked_scores,
    reference_pvalue,
    significance_by_group,
    significance_proportion,
    spearman,
    stratification_table,
    stratify,
)


def test_reference_pvalue_examples():
    assert reference_pvalue(-5, [-6, -7]).p_value == 0.0
    assert reference_pvalue(-9, [-6, -7]).p_value == 1.0
    result = reference_pvalue(-6.5, [-6, -7, -8, -5])
    assert result.p_value == 0.5
    assert result.n_exceeding == 2
    assert result.k_s == 5


def test_reference_pvalue_ties_do_not_count():
    assert reference_pvalue(-6, [-6, -6, -7]).p_value == 0.0


def test_reference_pvalue_empty_reference():
    with pytest.raises(EmptyReferenceError):
        reference_pvalue(-1.0, [])


def test_reference_pvalue_matches_brute_force_count():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        n = int(rng.integers(1, 20))
        refs = list(np.round(rng.normal(size=n), 1))
        target = float(np.round(rng.normal(), 1))
        count = 0
        for r in refs:
            if r > target:
                count += 1
        p = reference_pvalue(target, refs).p_value
        assert p == count / n
        # Raising the target never raises the p-value
        assert reference_pvalue(target + 0.5, refs).p_value <= p


def test_pvalue_for_ranked_scores_truncates_and_skips():
    assert pvalue_for_ranked_scores([-1, -2, -3, -0.5], k_s=3).p_value == 0.0
    assert pvalue_for_ranked_scores([-3, -2, -1], k_s=3).p_value == 1.0
    assert pvalue_for_ranked_scores([-1, -2], k_s=3) is None
    assert pvalue_for_ranked_scores([-1, -2], k_s=3, min_alternatives=1).p_value == 0.0


def test_significance_proportion():
    assert significance_proportion([0.0, 0.5], 0.01) == 0.5
    assert significance_proportion([0.0, 0.0, 0.0]) == 1.0
    assert significance_proportion([1.0, 1.0]) == 0.0
    # Strictly below alpha
    assert significance_proportion([0.01], 0.01) == 0.0
    with pytest.raises(EmptyInputError):
        significance_proportion([])
    with pytest.raises(ValueError):
        significance_proportion([0.5], alpha=1.0)


def _token(original_sentence, position, suggestions, replacement=None):
    site = tokenize(original_sentence).site(position)
    if replacement is None:
        decision = SubstitutionDecision(site, Action.KEEP, None, 0.5, 0.5)
    else:
        decision = SubstitutionDecision(site, Action.REPLACE, replacement, 0.6, 0.2)
    return AnnotatedToken(site, frozenset(suggestions), decision)


def test_stratify_examples():
    text = "it was critical"
    assert stratify(_token(text, 2, [])) is GroupLabel.NCA
    assert stratify(_token(text, 2, ["crucial"], "crucial")) is GroupLabel.CA
    assert stratify(_token(text, 2, ["integral", "important"], "crucial")) is GroupLabel.CD
    assert stratify(_token(text, 2, [], "crucial")) is GroupLabel.OMC
    assert stratify(_token(text, 2, ["crucial"])) is GroupLabel.OAC


def test_stratify_without_model_decision_is_model_kept():
    site = tokenize("it was critical").site(2)
    assert stratify(AnnotatedToken(site, frozenset({"vital"}))) is GroupLabel.OAC
    assert stratify(AnnotatedToken(site)) is GroupLabel.NCA


def test_stratification_matches_enumeration():
    rng = np.random.default_rng(3)
    text = "it was critical"
    options = ["crucial", "vital", "key"]
    tokens, expected = [], {label: 0 for label in GroupLabel}
    for _ in range(1000):
        annotator = [w for w in options if rng.random() < 0.4]
        replacement = options[int(rng.integers(3))] if rng.random() < 0.5 else None
        tokens.append(_token(text, 2, annotator, replacement))
        if not annotator and replacement is None:
            expected[GroupLabel.NCA] += 1
        elif annotator and replacement is None:
            expected[GroupLabel.OAC] += 1
        elif replacement is not None and not annotator:
            expected[GroupLabel.OMC] += 1
        elif replacement in annotator:
            expected[GroupLabel.CA] += 1
        else:
            expected[GroupLabel.CD] += 1
    counts = group_counts(stratify(t) for t in tokens)
    assert counts == expected
    assert all(count > 0 for count in counts.values())


def test_stratification_table_row_normalization():
    counts = {GroupLabel.OAC: 74, GroupLabel.CA: 11, GroupLabel.CD: 15, GroupLabel.NCA: 30, GroupLabel.OMC: 10}
    table = stratification_table(counts)
    assert table["annotator_changed"]["OAC"] == pytest.approx(0.74, abs=1e-12)
    assert table["annotator_changed"]["CA"] == pytest.approx(0.11, abs=1e-12)
    assert table["annotator_changed"]["CD"] == pytest.approx(0.15, abs=1e-12)
    assert table["annotator_kept"]["NCA"] == pytest.approx(0.75, abs=1e-12)
    assert table["annotator_kept"]["OMC"] == pytest.approx(0.25, abs=1e-12)


def test_stratification_table_empty_row_is_zero():
    table = stratification_table(group_counts([GroupLabel.NCA]))
    assert table["annotator_changed"] == {"OAC": 0.0, "CA": 0.0, "CD": 0.0}
    assert table["annotator_kept"]["NCA"] == 1.0


def test_significance_by_group():
    labels = [GroupLabel.CA, GroupLabel.CA, GroupLabel.CD, GroupLabel.NCA]
    p_values = [0.0, 0.5, 0.0, None]
    result = significance_by_group(labels, p_values, alpha=0.01)
    assert result["CA"] == 0.5
    assert result["CD"] == 1.0
    assert result["NCA"] is None
    assert result["OMC"] is None
    with pytest.raises(LengthMismatchError):
        significance_by_group(labels, p_values[:2])


def test_spearman_examples():
    assert spearman([1, 2, 3], [10, 20, 30]) == pytest.approx(1.0)
    assert spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert spearman([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8)


def test_spearman_errors():
    with pytest.raises(LengthMismatchError):
        spearman([1, 2], [1, 2, 3])
    with pytest.raises(ConstantInputError):
        spearman([1, 1, 1], [1, 2, 3])


def test_pool_pvalue_uses_first_score_as_target():
    result = pool_pvalue([-6.5, -6, -7, -8, -5])
    assert result.p_value == 0.5
    assert result.target_score == -6.5
    with pytest.raises(EmptyReferenceError):
        pool_pvalue([-1.0])
    with pytest.raises(EmptyInputError):
        pool_pvalue([])
