"""
Core domain types for smart word substitution.
Sentences, token sites, candidate pools, score records and decisions shared
by every other module. All types are immutable once built.
"""

import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import FrozenSet, Optional, Tuple

from src.errors import BadSiteError, EmptyTextError, LengthMismatchError

# Whole words (apostrophes kept inside a word) or single punctuation marks
TOKEN_PATTERN = re.compile(r"\w+(?:['’]\w+)*|[^\w\s]")


@dataclass(frozen=True)
class Sentence:
    """Tokenized text with character spans for every token"""

    text: str
    tokens: Tuple[str, ...]
    token_spans: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        if len(self.tokens) < 1:
            raise EmptyTextError("a sentence needs at least one token")
        if len(self.tokens) != len(self.token_spans):
            raise LengthMismatchError("tokens and token_spans differ in length")
        previous_end = 0
        for token, (start, end) in zip(self.tokens, self.token_spans):
            if start < previous_end or end <= start:
                raise BadSiteError(f"span ({start}, {end}) overlaps or is out of order")
            if self.text[start:end] != token:
                raise BadSiteError(f"span ({start}, {end}) does not cover token {token!r}")
            previous_end = end

    def __len__(self):
        return len(self.tokens)

    def site(self, position: int) -> "TokenSite":
        """Build the token site at `position`."""
        if not 0 <= position < len(self.tokens):
            raise BadSiteError(f"position {position} outside [0, {len(self.tokens)})")
        return TokenSite(sentence=self, position=position, original_token=self.tokens[position])


@dataclass(frozen=True)
class TokenSite:
    """One substitutable position n of a sentence, holding the original token w_n"""

    sentence: Sentence
    position: int
    original_token: str

    def __post_init__(self):
        if not 0 <= self.position < len(self.sentence.tokens):
            raise BadSiteError(f"position {self.position} outside [0, {len(self.sentence.tokens)})")
        if self.sentence.tokens[self.position] != self.original_token:
            raise BadSiteError(
                f"original token {self.original_token!r} does not match "
                f"{self.sentence.tokens[self.position]!r} at position {self.position}"
            )

    @property
    def span(self) -> Tuple[int, int]:
        return self.sentence.token_spans[self.position]


@dataclass(frozen=True)
class CandidatePool:
    """
    Ordered substitute candidates for one site.

    `probabilities` are normalized over the admissible vocabulary, so they sum to
    at most 1 over the pool itself; `renormalized()` gives the pool-normalized view.
    `original_probability` / `original_logit` place the original token on the
    same scale, which the substitution rule needs.
    """

    site: TokenSite
    candidates: Tuple[str, ...]
    logits: Tuple[float, ...]
    probabilities: Tuple[float, ...]
    token_ids: Optional[Tuple[int, ...]] = None
    original_probability: Optional[float] = None
    original_logit: Optional[float] = None

    def __post_init__(self):
        k = len(self.candidates)
        if k < 1:
            raise LengthMismatchError("a candidate pool needs at least one candidate")
        if len(self.logits) != k or len(self.probabilities) != k:
            raise LengthMismatchError("candidates, logits and probabilities differ in length")
        if self.token_ids is not None and len(self.token_ids) != k:
            raise LengthMismatchError("token_ids must align with candidates")
        if len(set(self.candidates)) != k:
            raise ValueError(f"duplicate candidates in pool: {self.candidates}")
        for p in self.probabilities:
            if not 0.0 <= p <= 1.0 + 1e-9:
                raise ValueError(f"probability {p} outside [0, 1]")
        # Softmax monotonicity: a higher logit never has a lower probability
        order = sorted(range(k), key=lambda i: -self.logits[i])
        for a, b in zip(order, order[1:]):
            if self.logits[a] > self.logits[b] and self.probabilities[a] < self.probabilities[b] - 1e-12:
                raise ValueError("probabilities are not monotone in logits")

    def __len__(self):
        return len(self.candidates)

    def probability_of(self, token: str) -> Optional[float]:
        """Probability of `token` in this pool (case-insensitive), or None."""
        wanted = token.casefold()
        for candidate, probability in zip(self.candidates, self.probabilities):
            if candidate.casefold() == wanted:
                return probability
        return None

    def renormalized(self) -> "CandidatePool":
        """Same pool with probabilities normalized over the pool itself."""
        total = sum(self.probabilities)
        if total <= 0:
            uniform = 1.0 / len(self.candidates)
            return replace(self, probabilities=tuple(uniform for _ in self.candidates))
        return replace(self, probabilities=tuple(p / total for p in self.probabilities))


@dataclass(frozen=True)
class ScoreRecord:
    """Model-based scores M(X) and M(X~_k) for one pool"""

    original_score: float
    candidate_scores: Tuple[float, ...]
    scorer_id: str

    def __post_init__(self):
        if not math.isfinite(self.original_score):
            raise ValueError(f"non-finite original score {self.original_score}")
        for score in self.candidate_scores:
            if not math.isfinite(score):
                raise ValueError(f"non-finite candidate score {score}")

    def check_aligned(self, pool: CandidatePool):
        if len(self.candidate_scores) != len(pool):
            raise LengthMismatchError(
                f"{len(self.candidate_scores)} scores for a pool of {len(pool)} candidates"
            )


class Action(Enum):
    REPLACE = "replace"
    KEEP = "keep"


@dataclass(frozen=True)
class SubstitutionDecision:
    """Outcome of the substitution rule at one site"""

    site: TokenSite
    action: Action
    replacement: Optional[str]
    chosen_probability: float
    original_probability: float

    def __post_init__(self):
        if self.action is Action.REPLACE:
            if self.replacement is None:
                raise ValueError("REPLACE needs a replacement token")
            if self.replacement.casefold() == self.site.original_token.casefold():
                raise ValueError("a replacement must differ from the original token")
            if not self.chosen_probability > self.original_probability:
                raise ValueError("REPLACE needs chosen_probability > original_probability")
        elif self.replacement is not None:
            raise ValueError("KEEP must not carry a replacement")


@dataclass(frozen=True)
class AnnotatedToken:
    """A site with the annotators' suggestions and the model's decision"""

    site: TokenSite
    annotator_suggestions: FrozenSet[str] = field(default_factory=frozenset)
    model_decision: Optional[SubstitutionDecision] = None

    def __post_init__(self):
        original = self.site.original_token.casefold()
        cleaned = frozenset(s for s in self.annotator_suggestions if s.casefold() != original)
        object.__setattr__(self, "annotator_suggestions", cleaned)


def tokenize(text: str) -> Sentence:
    """
    Split text into whole-word tokens and punctuation marks.

    Args:
        text: Raw sentence text

    Returns:
        Sentence whose spans index into the whitespace-trimmed text

    Raises:
        EmptyTextError: If the text is empty or only whitespace
    """
    if text is None or not text.strip():
        raise EmptyTextError("text is empty after trimming whitespace")
    text = text.strip()
    tokens = []
    spans = []
    for match in TOKEN_PATTERN.finditer(text):
        tokens.append(match.group(0))
        spans.append((match.start(), match.end()))
    return Sentence(text=text, tokens=tuple(tokens), token_spans=tuple(spans))


def apply_substitution(sentence: Sentence, site: TokenSite, candidate: str) -> Sentence:
    """
    Splice `candidate` into the character span of `site`.

    Only the span changes; surrounding whitespace is preserved byte for byte and
    later spans shift by the length difference.
    """
    if site.sentence is not sentence and site.sentence != sentence:
        raise BadSiteError("site does not belong to this sentence")
    if not 0 <= site.position < len(sentence.tokens):
        raise BadSiteError(f"position {site.position} outside [0, {len(sentence.tokens)})")
    if candidate == site.original_token:
        return sentence

    start, end = sentence.token_spans[site.position]
    shift = len(candidate) - (end - start)
    text = sentence.text[:start] + candidate + sentence.text[end:]

    tokens = list(sentence.tokens)
    tokens[site.position] = candidate
    spans = list(sentence.token_spans[:site.position])
    spans.append((start, start + len(candidate)))
    spans.extend((s + shift, e + shift) for s, e in sentence.token_spans[site.position + 1:])
    return Sentence(text=text, tokens=tuple(tokens), token_spans=tuple(spans))


def is_substitutable(token: str) -> bool:
    """Alphabetic whole words of two or more letters can be substituted."""
    return len(token) >= 2 and token.isalpha()


def match_case(candidate: str, original: str) -> str:
    """Give `candidate` the leading-capital (or all-caps) pattern of `original`."""
    if not candidate or not original:
        return candidate
    if len(original) > 1 and original.isupper():
        return candidate.upper()
    if original[0].isupper():
        return candidate[0].upper() + candidate[1:]
    return candidate
