"""
Label-free fine-tuning of a masked LM against a black-box sentence scorer.

For every sampled site the policy proposes a pool, the scorer ranks the
sentences the candidates produce, and a loss over the pool's logits pushes the
policy's ranking toward the scorer's. The scorer never receives gradients.
"""

import copy
import hashlib
import json
import logging
import math
import os
import time
from contextlib import contextmanager, nullcontext
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from src.candidates import MaskedSubstitutionModel, SamplingPlan, build_candidate_pool, sample_token_sites
from src.core import Sentence, TokenSite, apply_substitution, match_case
from src.data import DatasetRecord
from src.errors import ConfigError, CopyFailureError, DivergenceError, NoEligibleSitesError
from src.experiments import evaluate_model
from src.losses import REFERENCE_MODES, LossMode, compute_loss, make_batch
from src.scorer import SentenceScorer

logger = logging.getLogger(__name__)

# Long-run clip value, and the unit value used for smoke runs
GRAD_CLIP_PRESETS = {"default": 1e-5, "smoke": 1.0}
OPTIMIZER_NAME = "Adam"
# Weights live beside config.json, which holds the TrainConfig
MODEL_SUBDIR = "model"


@dataclass
class TrainConfig:
    loss_mode: LossMode = LossMode.MR_AS
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 0.0007
    grad_clip_max_norm: float = GRAD_CLIP_PRESETS["default"]
    dropout_rate: float = 0.1
    lambda_margin: float = 0.5
    gamma_mix: float = 1.0
    dpo_scale: float = 1.0
    bs_confidence: str = "softmax"
    sites_per_sentence: int = 5
    pool_size: int = 5
    corpus_sample: int = 100_000
    rng_seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss_mode, str):
            try:
                self.loss_mode = LossMode(self.loss_mode.upper())
            except ValueError as e:
                raise ConfigError(f"unknown loss_mode {self.loss_mode!r}") from e
        for name in ("epochs", "batch_size", "sites_per_sentence", "pool_size", "corpus_sample"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("train.learning_rate must be >= 0")
        if self.grad_clip_max_norm <= 0 or self.dpo_scale <= 0:
            raise ConfigError("train.grad_clip_max_norm and train.dpo_scale must be > 0")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("train.dropout_rate must lie in [0, 1)")
        if self.lambda_margin < 0 or self.gamma_mix < 0:
            raise ConfigError("train.lambda_margin and train.gamma_mix must be >= 0")
        if self.bs_confidence not in ("softmax", "identity"):
            raise ConfigError("train.bs_confidence must be 'softmax' or 'identity'")

    def sampling_plan(self, eligibility_filter: str = "alphabetic") -> SamplingPlan:
        return SamplingPlan(
            sites_per_sentence=self.sites_per_sentence,
            pool_size=self.pool_size,
            rng_seed=self.rng_seed,
            eligibility_filter=eligibility_filter,
        )

    def to_dict(self):
        data = asdict(self)
        data["loss_mode"] = self.loss_mode.value
        return data


def parameter_digest(model: torch.nn.Module) -> str:
    """sha256 over every tensor of the state dict, in name order."""
    digest = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        digest.update(name.encode("utf-8"))
        digest.update(state[name].detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


def freeze_reference(model: MaskedSubstitutionModel) -> MaskedSubstitutionModel:
    """Deep copy of the policy whose parameters never change."""
    try:
        frozen = copy.deepcopy(model.model)
    except Exception as e:
        raise CopyFailureError(f"could not copy the policy model: {e}") from e
    frozen.eval()
    for parameter in frozen.parameters():
        parameter.requires_grad_(False)
    return MaskedSubstitutionModel(frozen, model.tokenizer, device=model.device)


@contextmanager
def dropout_off(model: MaskedSubstitutionModel):
    """Run the policy in eval mode for one forward pass, restoring its mode after."""
    was_training = model.model.training
    model.model.eval()
    try:
        yield model
    finally:
        model.model.train(was_training)


@dataclass
class StepOutcome:
    loss_sum: float = 0.0
    n_sites: int = 0
    n_skipped: int = 0

    def merge(self, other: "StepOutcome"):
        self.loss_sum += other.loss_sum
        self.n_sites += other.n_sites
        self.n_skipped += other.n_skipped

    @property
    def mean_loss(self) -> float:
        return self.loss_sum / self.n_sites if self.n_sites else 0.0


def site_loss(policy: MaskedSubstitutionModel, scorer: SentenceScorer, site: TokenSite,
              config: TrainConfig, reference: Optional[MaskedSubstitutionModel] = None) -> Optional[float]:
    """
    Loss at one site; its gradient is accumulated into the policy.

    Returns None when the pool has fewer than two candidates. For the
    reference-based losses the policy forward pass runs without dropout, the
    same way the frozen reference does, so policy and reference logits agree
    until the first update.
    """
    sentence = site.sentence
    uses_reference = config.loss_mode in REFERENCE_MODES
    with dropout_off(policy) if uses_reference else nullcontext():
        logits = policy.masked_logits(site, grad=True)
    pool = build_candidate_pool(policy, site, config.pool_size, logits=logits)
    if len(pool) < 2:
        logger.warning(f"⚠️  Skipping site {site.position} of {sentence.text!r}: pool has {len(pool)} candidate")
        return None

    modified = [apply_substitution(sentence, site, match_case(c, site.original_token)) for c in pool.candidates]
    scores = scorer.score_batch(sentence, modified)
    original_score = scorer.score(sentence, sentence) if config.loss_mode is LossMode.MR_BS else 0.0

    ids = torch.tensor(pool.token_ids, dtype=torch.long, device=logits.device)
    pool_logits = logits.index_select(0, ids)
    ref_logits = None
    if uses_reference:
        if reference is None:
            raise ValueError(f"{config.loss_mode.value} needs a reference model")
        ref_logits = reference.masked_logits(site).index_select(0, ids).detach().cpu().double().numpy()

    batch, order = make_batch(
        pool_logits.detach().cpu().double().numpy(),
        scores,
        original_score=original_score,
        ref_logits=ref_logits,
        margin_unit=config.lambda_margin,
        mix_weight=config.gamma_mix,
        dpo_scale=config.dpo_scale,
        bs_confidence=config.bs_confidence,
    )
    loss, sorted_grad = compute_loss(batch, config.loss_mode)
    if not math.isfinite(loss) or not np.all(np.isfinite(sorted_grad)):
        raise DivergenceError(f"non-finite loss at site {site.position} of {sentence.text!r}")

    grad = np.zeros(len(order))
    grad[order] = sorted_grad
    pool_logits.backward(torch.as_tensor(grad, dtype=pool_logits.dtype, device=pool_logits.device))
    return loss


def make_training_step(policy: MaskedSubstitutionModel, scorer: SentenceScorer, sentence: Sentence,
                       plan: SamplingPlan, config: TrainConfig,
                       reference: Optional[MaskedSubstitutionModel] = None, salt: Sequence[int] = ()) -> StepOutcome:
    """
    Sample sites of one sentence, score their pools and accumulate gradients.

    Gradients are summed into the policy's .grad; the caller averages over
    sites and applies the optimizer.
    """
    outcome = StepOutcome()
    try:
        sites = sample_token_sites(sentence, plan, salt=salt, model=policy)
    except NoEligibleSitesError:
        logger.warning(f"⚠️  No eligible site in {sentence.text!r}")
        return outcome
    for site in sites:
        loss = site_loss(policy, scorer, site, config, reference)
        if loss is None:
            outcome.n_skipped += 1
        else:
            outcome.loss_sum += loss
            outcome.n_sites += 1
    return outcome


@dataclass
class TrainResult:
    checkpoints: List[str] = field(default_factory=list)
    epoch_losses: List[float] = field(default_factory=list)
    metrics_path: Optional[str] = None
    n_steps: int = 0


class Trainer:
    """Runs fine-tuning epochs and writes checkpoints and the metrics log"""

    def __init__(self, policy: MaskedSubstitutionModel, scorer: SentenceScorer, config: TrainConfig,
                 out_dir: str, heldout: Optional[Sequence[DatasetRecord]] = None,
                 heldout_plan: Optional[SamplingPlan] = None, eligibility_filter: str = "alphabetic"):
        self.policy = policy
        self.scorer = scorer
        self.config = config
        self.out_dir = out_dir
        self.heldout = list(heldout or [])
        self.plan = config.sampling_plan(eligibility_filter)
        self.heldout_plan = heldout_plan or self.plan
        self.reference = freeze_reference(policy) if config.loss_mode in REFERENCE_MODES else None
        self.optimizer = torch.optim.Adam(
            [p for p in policy.parameters() if p.requires_grad], lr=config.learning_rate
        )
        self.metrics_path = os.path.join(out_dir, "metrics.jsonl")
        self.last_checkpoint: Optional[str] = None
        self.step = 0

    def _log_metrics(self, loss: float, cs_heldout: Optional[float]):
        with open(self.metrics_path, "a", encoding="utf-8") as f:
            f.write(json.dumps({"step": self.step, "loss": loss, "cs_heldout": cs_heldout}) + "\n")

    def heldout_cs(self) -> Optional[float]:
        if not self.heldout:
            return None
        self.policy.eval()
        try:
            result = evaluate_model(self.policy, self.scorer, self.heldout, self.heldout_plan)
        finally:
            self.policy.train()
        summary = result.summaries()["cs"]
        return summary.median if summary else None

    def save_checkpoint(self, epoch: int) -> str:
        path = os.path.join(self.out_dir, "checkpoints", f"epoch-{epoch}")
        os.makedirs(path, exist_ok=True)
        self.policy.save(os.path.join(path, MODEL_SUBDIR))
        with open(os.path.join(path, "config.json"), "w", encoding="utf-8") as f:
            json.dump({**self.config.to_dict(), "optimizer": OPTIMIZER_NAME}, f, indent=2)
        with open(self.metrics_path, "r", encoding="utf-8") as src, \
                open(os.path.join(path, "metrics.jsonl"), "w", encoding="utf-8") as dst:
            dst.write(src.read())
        self.last_checkpoint = path
        logger.info(f"💾 Saved checkpoint {path}")
        return path

    def train_batch(self, batch: Sequence[DatasetRecord], epoch: int, offset: int) -> StepOutcome:
        """One optimizer step over a batch of sentences."""
        self.optimizer.zero_grad(set_to_none=False)
        outcome = StepOutcome()
        for i, record in enumerate(batch):
            outcome.merge(make_training_step(
                self.policy, self.scorer, record.sentence, self.plan, self.config,
                reference=self.reference, salt=(epoch, offset + i),
            ))
        if outcome.n_sites:
            for parameter in self.policy.parameters():
                if parameter.grad is not None:
                    parameter.grad.div_(outcome.n_sites)
            torch.nn.utils.clip_grad_norm_(self.policy.parameters(), self.config.grad_clip_max_norm)
            self.optimizer.step()
        return outcome

    def fine_tune(self, corpus: Sequence[DatasetRecord]) -> TrainResult:
        """
        Train for config.epochs over the corpus.

        Raises:
            ValueError: If the corpus is empty
            DivergenceError: On a non-finite loss; the last checkpoint is kept
        """
        corpus = list(corpus)
        if not corpus:
            raise ValueError("fine_tune needs a non-empty corpus")
        os.makedirs(self.out_dir, exist_ok=True)
        open(self.metrics_path, "w").close()
        torch.manual_seed(self.config.rng_seed)
        self.policy.train()

        result = TrainResult(metrics_path=self.metrics_path)
        size = self.config.batch_size
        n_batches = math.ceil(len(corpus) / size)
        logger.info(
            f"🚀 Fine-tuning with {self.config.loss_mode.value}: {len(corpus)} sentences, "
            f"{self.config.epochs} epochs, {n_batches} steps per epoch, {OPTIMIZER_NAME} "
            f"lr={self.config.learning_rate} clip={self.config.grad_clip_max_norm}"
        )

        for epoch in range(1, self.config.epochs + 1):
            start_time = time.time()
            order = np.random.default_rng([self.config.rng_seed, epoch]).permutation(len(corpus))
            epoch_loss = StepOutcome()
            progress = tqdm(range(n_batches), desc=f"Epoch {epoch}", unit="step")
            for b in progress:
                batch = [corpus[i] for i in order[b * size:(b + 1) * size]]
                try:
                    outcome = self.train_batch(batch, epoch, b * size)
                except DivergenceError as e:
                    logger.error(f"❌ Training diverged at step {self.step}: {e.message}")
                    raise DivergenceError(e.message, last_checkpoint=self.last_checkpoint) from e
                self.step += 1
                epoch_loss.merge(outcome)
                cs_heldout = self.heldout_cs() if b == n_batches - 1 else None
                self._log_metrics(outcome.mean_loss, cs_heldout)
                logger.debug(
                    f"step {self.step}: loss={outcome.mean_loss:.6f} "
                    f"sites={outcome.n_sites} skipped={outcome.n_skipped}"
                )
                progress.set_postfix(loss=f"{outcome.mean_loss:.4f}")
                if cs_heldout is not None:
                    logger.info(f"📊 Epoch {epoch} held-out CS median: {cs_heldout:.4f}")

            result.epoch_losses.append(epoch_loss.mean_loss)
            result.checkpoints.append(self.save_checkpoint(epoch))
            logger.info(
                f"✅ Epoch {epoch} done in {time.time() - start_time:.1f}s, "
                f"mean loss {epoch_loss.mean_loss:.6f}, cache hit rate {self._hit_rate():.2f}"
            )

        result.n_steps = self.step
        return result

    def _hit_rate(self) -> float:
        return self.scorer.cache.hit_rate if self.scorer.cache is not None else 0.0


def fine_tune(policy: MaskedSubstitutionModel, scorer: SentenceScorer, config: TrainConfig,
              corpus: Sequence[DatasetRecord], out_dir: str,
              heldout: Optional[Sequence[DatasetRecord]] = None) -> TrainResult:
    return Trainer(policy, scorer, config, out_dir, heldout=heldout).fine_tune(corpus)
