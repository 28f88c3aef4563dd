"""
Candidate pools from a masked language model.
Masks one token site, reads the model's distribution at the mask and keeps the
top-K admissible vocabulary items; also samples which sites to visit.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from src.core import CandidatePool, Sentence, TokenSite, is_substitutable
from src.errors import ConfigError, ModelFailureError, NoEligibleSitesError

logger = logging.getLogger(__name__)

DEFAULT_MODEL_ID = "bert-base-uncased"


@dataclass(frozen=True)
class SamplingPlan:
    sites_per_sentence: int = 5
    pool_size: int = 5
    rng_seed: int = 0
    eligibility_filter: str = "alphabetic"

    def __post_init__(self):
        if self.sites_per_sentence < 1:
            raise ConfigError("sites_per_sentence must be >= 1")
        if self.pool_size < 1:
            raise ConfigError("pool_size must be >= 1")
        if self.eligibility_filter not in ELIGIBILITY_FILTERS:
            raise ConfigError(
                f"unknown eligibility_filter {self.eligibility_filter!r}; "
                f"choose from {sorted(ELIGIBILITY_FILTERS)}"
            )


ELIGIBILITY_FILTERS: Dict[str, Callable[[str], bool]] = {
    "alphabetic": is_substitutable,
    "word": lambda token: any(ch.isalnum() for ch in token),
}


class MaskedSubstitutionModel:
    """
    A masked LM and its tokenizer, seen as a substitution model.

    Only word-piece vocabularies are supported: admissible items are alphabetic
    vocabulary entries that are neither special tokens nor "##" continuations.
    """

    def __init__(self, model, tokenizer, device: str = "cpu"):
        if tokenizer.mask_token_id is None:
            raise ModelFailureError("tokenizer has no mask token")
        self.model = model.to(device)
        self.tokenizer = tokenizer
        self.device = device
        self.lowercase = bool(getattr(tokenizer, "do_lower_case", False))
        self._admissible = None

    @classmethod
    def from_pretrained(cls, model_id: str = DEFAULT_MODEL_ID, dropout_rate: Optional[float] = None,
                        device: str = "cpu") -> "MaskedSubstitutionModel":
        from transformers import AutoConfig, AutoModelForMaskedLM, AutoTokenizer

        logger.info(f"⏳ Loading masked LM {model_id}...")
        try:
            config = AutoConfig.from_pretrained(model_id)
            if dropout_rate is not None:
                for name in ("hidden_dropout_prob", "attention_probs_dropout_prob", "dropout", "attention_dropout"):
                    if hasattr(config, name):
                        setattr(config, name, dropout_rate)
            tokenizer = AutoTokenizer.from_pretrained(model_id)
            model = AutoModelForMaskedLM.from_pretrained(model_id, config=config)
        except Exception as e:
            raise ModelFailureError(f"could not load masked LM {model_id}: {e}") from e
        return cls(model, tokenizer, device=device)

    def save(self, path: str):
        self.model.save_pretrained(path)
        self.tokenizer.save_pretrained(path)

    @property
    def vocab_size(self) -> int:
        return len(self.tokenizer)

    @property
    def admissible_mask(self) -> torch.Tensor:
        """Boolean vector over the vocabulary; True where an item may enter a pool."""
        if self._admissible is None:
            special = set(self.tokenizer.all_special_ids)
            tokens = self.tokenizer.convert_ids_to_tokens(list(range(self.vocab_size)))
            mask = [
                token_id not in special and bool(token) and token.isalpha()
                for token_id, token in enumerate(tokens)
            ]
            self._admissible = torch.tensor(mask, dtype=torch.bool, device=self.device)
        return self._admissible

    def _normalize(self, word: str) -> str:
        return word.lower() if self.lowercase else word

    def is_single_item(self, word: str) -> bool:
        return self.token_id(word) is not None

    def token_id(self, word: str) -> Optional[int]:
        """Vocabulary id of `word` when it is one item of the vocabulary."""
        pieces = self.tokenizer.tokenize(self._normalize(word))
        if len(pieces) != 1 or pieces[0] == self.tokenizer.unk_token:
            return None
        return int(self.tokenizer.convert_tokens_to_ids(pieces[0]))

    def masked_input(self, site: TokenSite):
        """Token ids of the sentence with the site replaced by the mask, and the mask index."""
        start, end = site.span
        text = site.sentence.text
        masked_text = text[:start] + self.tokenizer.mask_token + text[end:]
        input_ids = self.tokenizer(masked_text)["input_ids"]
        limit = getattr(self.model.config, "max_position_embeddings", None)
        if limit is not None and len(input_ids) > limit:
            raise ModelFailureError(f"{len(input_ids)} tokens exceed the model limit of {limit}")
        try:
            mask_index = input_ids.index(self.tokenizer.mask_token_id)
        except ValueError as e:
            raise ModelFailureError("mask token lost during tokenization") from e
        return input_ids, mask_index

    def masked_logits(self, site: TokenSite, grad: bool = False) -> torch.Tensor:
        """Vocabulary logits at the masked site (1-D)."""
        input_ids, mask_index = self.masked_input(site)
        ids = torch.tensor([input_ids], dtype=torch.long, device=self.device)
        try:
            with torch.set_grad_enabled(grad):
                output = self.model(input_ids=ids, attention_mask=torch.ones_like(ids))
        except (RuntimeError, IndexError) as e:
            raise ModelFailureError(f"masked LM forward failed: {e}") from e
        return output.logits[0, mask_index]

    def parameters(self):
        return self.model.parameters()

    def train(self):
        self.model.train()
        return self

    def eval(self):
        self.model.eval()
        return self


def eligible_positions(sentence: Sentence, eligibility_filter: str = "alphabetic",
                       model: Optional[MaskedSubstitutionModel] = None) -> List[int]:
    """Positions passing the filter (and, given a model, single vocabulary items)."""
    accept = ELIGIBILITY_FILTERS[eligibility_filter]
    positions = []
    for position, token in enumerate(sentence.tokens):
        if not accept(token):
            continue
        if model is not None and not model.is_single_item(token):
            continue
        positions.append(position)
    return positions


def sample_token_sites(sentence: Sentence, plan: SamplingPlan, salt: Sequence[int] = (),
                       model: Optional[MaskedSubstitutionModel] = None) -> List[TokenSite]:
    """
    Uniform sample of eligible sites without replacement, in token order.

    Args:
        sentence: Sentence to sample from
        plan: Sampling plan (size, seed, eligibility filter)
        salt: Extra integers folded into the seed (e.g. epoch and record index)
        model: When given, sites must also be single vocabulary items

    Raises:
        NoEligibleSitesError: If no token passes the filter
    """
    positions = eligible_positions(sentence, plan.eligibility_filter, model)
    if not positions:
        raise NoEligibleSitesError(f"no eligible sites in {sentence.text!r}")
    rng = np.random.default_rng([plan.rng_seed, *salt])
    size = min(plan.sites_per_sentence, len(positions))
    chosen = rng.choice(len(positions), size=size, replace=False)
    return [sentence.site(positions[i]) for i in sorted(chosen)]


def build_candidate_pool(model: MaskedSubstitutionModel, site: TokenSite, k: int,
                         logits: Optional[torch.Tensor] = None) -> CandidatePool:
    """
    Top-K admissible vocabulary items at a masked site.

    Probabilities are a softmax over the admissible vocabulary; the original
    token gets its value on the same scale (0 when it is not admissible).
    Pass `logits` to reuse a forward pass already made.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if logits is None:
        logits = model.masked_logits(site)
    logits = logits.detach().float()
    admissible = model.admissible_mask
    n_admissible = int(admissible.sum().item())
    if n_admissible == 0:
        raise ModelFailureError("the vocabulary has no admissible items")
    if n_admissible < k:
        logger.warning(f"⚠️  Only {n_admissible} admissible items for K={k}; returning a short pool")
        k = n_admissible

    masked = logits.masked_fill(~admissible, float("-inf"))
    log_probs = F.log_softmax(masked, dim=-1)
    # Stable sort keeps ties in vocabulary order
    order = torch.sort(masked, descending=True, stable=True).indices[:k].tolist()

    original_id = model.token_id(site.original_token)
    if original_id is not None and bool(admissible[original_id]):
        original_probability = float(log_probs[original_id].exp().item())
        original_logit = float(logits[original_id].item())
    else:
        original_probability = 0.0
        original_logit = None

    return CandidatePool(
        site=site,
        candidates=tuple(model.tokenizer.convert_ids_to_tokens(order)),
        logits=tuple(float(logits[i].item()) for i in order),
        probabilities=tuple(float(log_probs[i].exp().item()) for i in order),
        token_ids=tuple(order),
        original_probability=original_probability,
        original_logit=original_logit,
    )
