"""
Model-based sentence scoring.
Conditional log-likelihood of a modified sentence given the original one,
from a frozen seq2seq model (BARTScore style) or from a causal LM under a
paraphrase prompt (GPTScore style), with a persistent JSON-lines cache.
"""

import hashlib
import json
import logging
import os
import threading
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from src.core import Sentence
from src.errors import (
    BackendFailureError,
    CacheIOError,
    ConfigError,
    EmptyInputError,
    LengthOverflowError,
)
from src.prompt_manager import PromptManager, split_paraphrase_template

logger = logging.getLogger(__name__)


class Backend(Enum):
    SEQ2SEQ_LL = "seq2seq_ll"
    CAUSAL_LM_PROMPTED = "causal_lm_prompted"


class Aggregation(Enum):
    SUM = "sum"
    MEAN = "mean"


@dataclass(frozen=True)
class ScorerConfig:
    """Which frozen model scores sentences, and how token log-likelihoods combine"""

    backend: Backend = Backend.SEQ2SEQ_LL
    model_id: str = "facebook/bart-large-cnn"
    aggregation: Aggregation = Aggregation.SUM
    prompt_template: Optional[str] = None
    checkpoint_path: Optional[str] = None
    batch_size: int = 4
    device: str = "cpu"
    max_length: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.backend, str):
            object.__setattr__(self, "backend", Backend(self.backend))
        if isinstance(self.aggregation, str):
            object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        if self.backend is Backend.SEQ2SEQ_LL and self.prompt_template is not None:
            raise ConfigError("the seq2seq scorer takes no prompt_template")
        if self.backend is Backend.CAUSAL_LM_PROMPTED and not self.prompt_template:
            raise ConfigError("the prompted causal-LM scorer needs a prompt_template")
        if self.batch_size < 1:
            raise ConfigError("scorer batch_size must be >= 1")

    @property
    def scorer_id(self) -> str:
        parts = [self.backend.value, self.model_id, self.aggregation.value]
        if self.checkpoint_path:
            parts.append(f"ckpt={os.path.basename(self.checkpoint_path)}")
        if self.prompt_template:
            digest = hashlib.sha1(self.prompt_template.encode("utf-8")).hexdigest()[:10]
            parts.append(f"tpl={digest}")
        return "|".join(parts)


def scorer_preset(name: str, prompt_manager: Optional[PromptManager] = None) -> ScorerConfig:
    """Named scorer setups: bartscore, gptscore-gpt2-medium, gptscore-opt-350m."""
    if name == "bartscore":
        return ScorerConfig()
    causal_models = {
        "gptscore-gpt2-medium": "gpt2-medium",
        "gptscore-opt-350m": "facebook/opt-350m",
    }
    if name in causal_models:
        template = (prompt_manager or PromptManager()).get_paraphrase_template()
        return ScorerConfig(
            backend=Backend.CAUSAL_LM_PROMPTED,
            model_id=causal_models[name],
            prompt_template=template,
        )
    raise ConfigError(f"unknown scorer preset: {name}")


CacheKey = Tuple[str, str, str]


class ScoreCache:
    """
    Append-only score cache keyed by (scorer_id, original text, modified text).

    One JSON object per line; the last record for a key wins. Many readers, one
    writer at a time.
    """

    def __init__(self, path: Optional[str] = None):
        self.path = path
        self._entries: Dict[CacheKey, float] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if path and os.path.exists(path):
            self._load()

    def _load(self):
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                for line_number, line in enumerate(f, 1):
                    if not line.strip():
                        continue
                    try:
                        record = json.loads(line)
                        key = (record["scorer"], record["src"], record["tgt"])
                        self._entries[key] = float(record["score"])
                    except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                        logger.warning(f"⚠️  Skipping unreadable cache line {line_number} in {self.path}")
        except OSError as e:
            logger.warning(f"⚠️  {CacheIOError(str(e))}; starting with an empty cache")

    def __len__(self):
        return len(self._entries)

    def lookup(self, key: CacheKey) -> Optional[float]:
        value = self._entries.get(key)
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return value

    def store(self, key: CacheKey, value: float):
        with self._lock:
            self._entries[key] = value
            if not self.path:
                return
            record = {"scorer": key[0], "src": key[1], "tgt": key[2], "score": value}
            try:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps(record, ensure_ascii=False) + "\n")
            except OSError as e:
                # Non-fatal: the in-memory entry is kept and scoring goes on
                logger.warning(f"⚠️  {CacheIOError(str(e))}")

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


class SentenceScorer:
    """
    Scores M(X~) = sum_n log p(x~_n | x~_<n, X) under a frozen model.

    The model and tokenizer can be passed in directly; otherwise they are
    loaded from `config.model_id`.
    """

    def __init__(self, config: ScorerConfig, model=None, tokenizer=None, cache: Optional[ScoreCache] = None):
        self.config = config
        self.cache = cache
        if model is None or tokenizer is None:
            model, tokenizer = self._load_backend(config)
        self.model = model.to(config.device)
        self.model.eval()
        self.tokenizer = tokenizer
        for parameter in self.model.parameters():
            parameter.requires_grad_(False)

    @staticmethod
    def _load_backend(config: ScorerConfig):
        from transformers import AutoModelForCausalLM, AutoModelForSeq2SeqLM, AutoTokenizer

        logger.info(f"⏳ Loading scorer {config.model_id} ({config.backend.value})...")
        try:
            tokenizer = AutoTokenizer.from_pretrained(config.model_id)
            if config.backend is Backend.SEQ2SEQ_LL:
                model = AutoModelForSeq2SeqLM.from_pretrained(config.model_id)
            else:
                model = AutoModelForCausalLM.from_pretrained(config.model_id)
            if config.checkpoint_path:
                state = torch.load(config.checkpoint_path, map_location="cpu")
                model.load_state_dict(state)
        except Exception as e:
            raise BackendFailureError(f"could not load scorer {config.model_id}: {e}") from e
        return model, tokenizer

    @property
    def scorer_id(self) -> str:
        return self.config.scorer_id

    @property
    def context_window(self) -> int:
        if self.config.max_length:
            return self.config.max_length
        return int(getattr(self.model.config, "max_position_embeddings", 1024))

    def score(self, original: Sentence, modified: Sentence) -> float:
        """Score one modified sentence against its original."""
        return self.score_batch(original, [modified])[0]

    def gptscore_paraphrase(self, original: Sentence, modified: Sentence) -> float:
        """Log-likelihood of the modified text inside the filled paraphrase prompt."""
        if self.config.backend is not Backend.CAUSAL_LM_PROMPTED:
            raise BackendFailureError("gptscore_paraphrase needs a CAUSAL_LM_PROMPTED scorer")
        return self.score(original, modified)

    def score_batch(self, original: Sentence, modified_list: Sequence[Sentence]) -> List[float]:
        """
        Score many modifications of one sentence.

        Cached values are reused; the rest are computed in length-grouped batches
        so no padding enters the computation. Any failure aborts the whole batch.
        """
        if not modified_list:
            raise EmptyInputError("score_batch needs at least one modified sentence")

        results: List[Optional[float]] = [None] * len(modified_list)
        pending: Dict[str, List[int]] = defaultdict(list)
        for i, modified in enumerate(modified_list):
            key = (self.scorer_id, original.text, modified.text)
            cached = self.cache.lookup(key) if self.cache is not None else None
            if cached is not None:
                results[i] = cached
            else:
                pending[modified.text].append(i)

        if pending:
            texts = list(pending)
            computed = self._compute(original.text, texts)
            for text, value in zip(texts, computed):
                for i in pending[text]:
                    results[i] = value
                if self.cache is not None:
                    self.cache.store((self.scorer_id, original.text, text), value)

        return results

    def _compute(self, original_text: str, texts: List[str]) -> List[float]:
        if self.config.backend is Backend.SEQ2SEQ_LL:
            source_ids, target_ids = self._encode_seq2seq(original_text, texts)
            forward = lambda rows: self._seq2seq_logliks(source_ids, rows)
        else:
            target_ids = self._encode_prompted(original_text, texts)
            forward = self._causal_logliks

        # Group equal lengths so every batch is pad-free
        by_length: Dict[int, List[int]] = defaultdict(list)
        for i, ids in enumerate(target_ids):
            by_length[len(ids[1]) if isinstance(ids, tuple) else len(ids)].append(i)

        values: List[Optional[float]] = [None] * len(texts)
        size = self.config.batch_size
        try:
            for indices in by_length.values():
                for start in range(0, len(indices), size):
                    chunk = indices[start:start + size]
                    token_logps = forward([target_ids[i] for i in chunk])
                    for i, logps in zip(chunk, token_logps):
                        values[i] = self._aggregate(logps)
        except (RuntimeError, ValueError, IndexError) as e:
            raise BackendFailureError(f"scoring failed: {e}") from e
        return values

    def _aggregate(self, token_logps: torch.Tensor) -> float:
        if self.config.aggregation is Aggregation.MEAN:
            return float(token_logps.mean().item())
        return float(token_logps.sum().item())

    def _check_length(self, n_tokens: int):
        if n_tokens > self.context_window:
            raise LengthOverflowError(f"{n_tokens} tokens exceed the context window of {self.context_window}")

    # seq2seq backend

    def _encode_seq2seq(self, original_text: str, texts: List[str]):
        source_ids = self.tokenizer(original_text)["input_ids"]
        self._check_length(len(source_ids))
        target_ids = []
        for text in texts:
            ids = self.tokenizer(text)["input_ids"]
            self._check_length(len(ids))
            target_ids.append(ids)
        return source_ids, target_ids

    def _decoder_start_id(self) -> int:
        model_config = self.model.config
        for name in ("decoder_start_token_id", "eos_token_id", "bos_token_id"):
            value = getattr(model_config, name, None)
            if value is not None:
                return int(value)
        raise BackendFailureError("model config names no decoder start token")

    def _seq2seq_logliks(self, source_ids: List[int], rows: List[List[int]]) -> List[torch.Tensor]:
        device = self.config.device
        labels = torch.tensor(rows, dtype=torch.long, device=device)
        start = torch.full((labels.shape[0], 1), self._decoder_start_id(), dtype=torch.long, device=device)
        decoder_input_ids = torch.cat([start, labels[:, :-1]], dim=1)
        input_ids = torch.tensor([source_ids], dtype=torch.long, device=device).expand(labels.shape[0], -1)

        with torch.no_grad():
            output = self.model(
                input_ids=input_ids,
                attention_mask=torch.ones_like(input_ids),
                decoder_input_ids=decoder_input_ids,
            )
        log_probs = F.log_softmax(output.logits.float(), dim=-1)
        token_logps = log_probs.gather(-1, labels.unsqueeze(-1)).squeeze(-1)
        return [row for row in token_logps]

    # prompted causal backend

    def _encode_prompted(self, original_text: str, texts: List[str]):
        prefix, _ = split_paraphrase_template(self.config.prompt_template, original_text)
        # The space before {modified} belongs to the scored span so BPE word
        # boundaries match tokenizing the whole prompt
        stem = prefix.rstrip()
        gap = prefix[len(stem):]
        prefix_ids = self.tokenizer(stem, add_special_tokens=False)["input_ids"]
        if not prefix_ids:
            raise BackendFailureError("the paraphrase template has no text before {modified}")
        encoded = []
        for text in texts:
            span_ids = self.tokenizer(gap + text, add_special_tokens=False)["input_ids"]
            self._check_length(len(prefix_ids) + len(span_ids))
            encoded.append((prefix_ids, span_ids))
        return encoded

    def _causal_logliks(self, rows: List[Tuple[List[int], List[int]]]) -> List[torch.Tensor]:
        device = self.config.device
        prefix_len = len(rows[0][0])
        input_ids = torch.tensor([p + s for p, s in rows], dtype=torch.long, device=device)
        with torch.no_grad():
            output = self.model(input_ids=input_ids, attention_mask=torch.ones_like(input_ids))
        log_probs = F.log_softmax(output.logits.float(), dim=-1)
        # Token t is predicted from position t - 1
        predicted = log_probs[:, prefix_len - 1:-1, :]
        targets = input_ids[:, prefix_len:]
        token_logps = predicted.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
        return [row for row in token_logps]

