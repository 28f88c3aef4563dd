"""
External LLM baseline.
Sends the word-usage suggestion prompt (ranked or unranked) to an
OpenAI-compatible endpoint, repairs or retries malformed JSON, and turns the
answer into substitution decisions.
"""

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from openai import OpenAI

from src.core import Action, CandidatePool, Sentence, SubstitutionDecision, match_case
from src.errors import ClientError, ConfigError, MalformedResponseError
from src.prompt_manager import PromptManager
from src.subst import Suggestion

logger = logging.getLogger(__name__)

API_KEY_ENV = "SWS_LLM_API_KEY"
# Local OpenAI-compatible servers accept any key
PLACEHOLDER_API_KEY = "lm-studio"

SuggestionMap = Dict[str, List[str]]


@dataclass(frozen=True)
class LLMClientConfig:
    endpoint: str = "http://localhost:1234/v1"
    model: str = "local-model"
    temperature: float = 0.0
    max_retries: int = 5
    requests_per_minute: Optional[float] = None
    max_concurrency: int = 4
    timeout: float = 120.0
    archive_path: Optional[str] = None

    def __post_init__(self):
        if self.max_retries < 1:
            raise ConfigError("llm.max_retries must be >= 1")
        if self.max_concurrency < 1:
            raise ConfigError("llm.max_concurrency must be >= 1")
        if self.requests_per_minute is not None and self.requests_per_minute <= 0:
            raise ConfigError("llm.requests_per_minute must be > 0")
        if self.temperature < 0:
            raise ConfigError("llm.temperature must be >= 0")


@dataclass
class SuggestionResult:
    suggestions: SuggestionMap
    retry_count: int = 0
    dropped: List[str] = field(default_factory=list)


CURLY_QUOTES = str.maketrans({"“": '"', "”": '"', "‘": "'", "’": "'"})
CODE_FENCE = re.compile(r"^```[a-zA-Z]*\s*|\s*```$")


def repair_json(text: str) -> Optional[dict]:
    """
    Parse a JSON object out of a model answer.

    Tries the raw text, then strips code fences, cuts to the outermost braces
    and straightens curly quotes. Returns None if nothing parses to an object.
    """
    attempts = [text]
    stripped = CODE_FENCE.sub("", text.strip())
    attempts.append(stripped)
    start, end = stripped.find("{"), stripped.rfind("}")
    if start != -1 and end > start:
        attempts.append(stripped[start:end + 1])
    attempts.extend(a.translate(CURLY_QUOTES) for a in list(attempts))
    for candidate in attempts:
        try:
            parsed = json.loads(candidate)
        except (json.JSONDecodeError, TypeError):
            continue
        if isinstance(parsed, dict):
            return parsed
    return None


def validate_suggestions(parsed: dict, sentence: Sentence) -> Tuple[SuggestionMap, List[str]]:
    """Keep entries whose key is a token of the sentence and whose value is a list of words."""
    tokens = {t.casefold() for t in sentence.tokens}
    kept: SuggestionMap = {}
    dropped = []
    for word, suggestions in parsed.items():
        if isinstance(suggestions, str):
            suggestions = [suggestions]
        if word.casefold() not in tokens or not isinstance(suggestions, list):
            dropped.append(word)
            continue
        cleaned = [s.strip() for s in suggestions if isinstance(s, str) and s.strip()]
        kept[word] = cleaned
    return kept, dropped


class LLMBaselineClient:
    """Prompts an OpenAI-compatible chat endpoint for word-usage suggestions"""

    def __init__(self, config: Optional[LLMClientConfig] = None, client=None,
                 prompt_manager: Optional[PromptManager] = None):
        self.config = config or LLMClientConfig()
        self.prompt_manager = prompt_manager or PromptManager()
        if client is None:
            api_key = os.environ.get(API_KEY_ENV) or PLACEHOLDER_API_KEY
            client = OpenAI(base_url=self.config.endpoint, api_key=api_key)
        self.client = client
        self._rate_lock = threading.Lock()
        self._archive_lock = threading.Lock()
        self._last_request = 0.0

    def _wait_for_rate_limit(self):
        if not self.config.requests_per_minute:
            return
        interval = 60.0 / self.config.requests_per_minute
        with self._rate_lock:
            delay = self._last_request + interval - time.monotonic()
            if delay > 0:
                time.sleep(delay)
            self._last_request = time.monotonic()

    def _archive(self, prompt: str, response: Optional[str], attempt: int):
        if not self.config.archive_path:
            return
        record = {"model": self.config.model, "attempt": attempt, "prompt": prompt, "response": response}
        with self._archive_lock, open(self.config.archive_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")

    def _complete(self, prompt: str) -> str:
        self._wait_for_rate_limit()
        logger.debug(f"⏳ Sending request to {self.config.endpoint}...")
        start_time = time.time()
        try:
            response = self.client.chat.completions.create(
                model=self.config.model,
                messages=[{"role": "user", "content": prompt}],
                temperature=self.config.temperature,
                timeout=self.config.timeout,
            )
        except Exception as e:
            raise ClientError(f"request to {self.config.endpoint} failed: {e}") from e
        logger.debug(f"✅ Response received in {time.time() - start_time:.2f}s")
        try:
            return response.choices[0].message.content or ""
        except (AttributeError, IndexError) as e:
            raise ClientError(f"unexpected response shape: {e}") from e

    def prompt_suggestions(self, sentence: Sentence, ranked: bool = False) -> SuggestionResult:
        """
        Ask for suggestions, re-querying until the answer holds a JSON object.

        Raises:
            MalformedResponseError: If max_retries attempts all fail to parse
            ClientError: If the endpoint cannot be reached
        """
        prompt = self.prompt_manager.render_suggestion_prompt(sentence.text, ranked)
        for attempt in range(1, self.config.max_retries + 1):
            content = self._complete(prompt)
            self._archive(prompt, content, attempt)
            parsed = repair_json(content)
            if parsed is None:
                logger.warning(f"⚠️  Malformed JSON on attempt {attempt}/{self.config.max_retries}")
                continue
            suggestions, dropped = validate_suggestions(parsed, sentence)
            for word in dropped:
                logger.warning(f"⚠️  Dropping {word!r}: not a word of the sentence")
            return SuggestionResult(suggestions=suggestions, retry_count=attempt - 1, dropped=dropped)
        raise MalformedResponseError(
            f"no valid JSON after {self.config.max_retries} attempts", attempts=self.config.max_retries
        )

    def prompt_many(self, sentences: Sequence[Sentence], ranked: bool = False) -> List[SuggestionResult]:
        """prompt_suggestions over many sentences; results keep request order."""
        with ThreadPoolExecutor(max_workers=self.config.max_concurrency) as pool:
            return list(pool.map(lambda s: self.prompt_suggestions(s, ranked), sentences))


def rank_probabilities(n: int) -> List[float]:
    """Pseudo-probabilities 1/rank, renormalized to sum to 1."""
    weights = [1.0 / rank for rank in range(1, n + 1)]
    total = sum(weights)
    return [w / total for w in weights]


def to_decisions(suggestions: SuggestionMap, sentence: Sentence) -> List[Suggestion]:
    """
    One entry per token: REPLACE with the first suggestion at the first
    occurrence of each suggested word, KEEP everywhere else.
    """
    by_word = {word.casefold(): words for word, words in suggestions.items()}
    results = []
    for position, token in enumerate(sentence.tokens):
        site = sentence.site(position)
        words = by_word.pop(token.casefold(), None)
        candidates = []
        if words:
            seen = set()
            for word in words:
                key = word.casefold()
                if key != token.casefold() and key not in seen:
                    seen.add(key)
                    candidates.append(word)
        if not candidates:
            results.append((site, SubstitutionDecision(site, Action.KEEP, None, 0.0, 0.0), None))
            continue
        probabilities = rank_probabilities(len(candidates))
        # Decreasing pseudo-logits so the pool keeps rank order
        pool = CandidatePool(
            site=site,
            candidates=tuple(candidates),
            logits=tuple(float(-rank) for rank in range(len(candidates))),
            probabilities=tuple(probabilities),
            original_probability=0.0,
        )
        decision = SubstitutionDecision(
            site=site,
            action=Action.REPLACE,
            replacement=match_case(candidates[0], token),
            chosen_probability=probabilities[0],
            original_probability=0.0,
        )
        results.append((site, decision, pool))
    return results
