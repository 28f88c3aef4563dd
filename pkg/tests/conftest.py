"""
Shared fixtures: tiny randomly initialised BERT / BART / GPT-2 models over a
small word-level vocabulary, so no test downloads anything.
"""

import os
import sys
from types import SimpleNamespace

import pytest
import torch

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.candidates import MaskedSubstitutionModel  # noqa: E402
from src.prompt_manager import PromptManager  # noqa: E402
from src.scorer import Backend, ScoreCache, ScorerConfig, SentenceScorer  # noqa: E402

FIXTURES_DIR = os.path.join(os.path.dirname(__file__), "fixtures")

SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
WORDS = [
    ".", ",", "!", "?", "'",
    "the", "a", "cat", "dog", "cow", "sat", "on", "mat", "ran", "quick", "brown", "fox",
    "jumps", "over", "lazy", "results", "were", "very", "good", "bad", "is", "it", "was",
    "big", "small", "red", "house", "tree", "bird", "sang", "loud", "song", "critical",
    "crucial", "vital", "important", "day", "night", "we", "they", "she", "he", "walked",
    "home", "and", "rewrite", "following", "text", "with", "same", "semantics", "in",
    "other", "words", "##s", "##ing", "2",
]
VOCAB = SPECIAL_TOKENS + WORDS


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: needs a pretrained checkpoint; runs with SWS_RUN_SLOW=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SWS_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SWS_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def vocab_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("vocab") / "vocab.txt"
    path.write_text("\n".join(VOCAB) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture(scope="session")
def tokenizer(vocab_file):
    from transformers import BertTokenizer

    return BertTokenizer(vocab_file=vocab_file, do_lower_case=True)


def make_bert(seed: int = 0, dropout: float = 0.0):
    from transformers import BertConfig, BertForMaskedLM

    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=37,
        max_position_embeddings=64,
        hidden_dropout_prob=dropout,
        attention_probs_dropout_prob=dropout,
        pad_token_id=0,
    )
    return BertForMaskedLM(config)


def make_bart(seed: int = 0):
    from transformers import BartConfig, BartForConditionalGeneration

    torch.manual_seed(seed)
    config = BartConfig(
        vocab_size=len(VOCAB),
        d_model=32,
        encoder_layers=1,
        decoder_layers=1,
        encoder_attention_heads=2,
        decoder_attention_heads=2,
        encoder_ffn_dim=37,
        decoder_ffn_dim=37,
        max_position_embeddings=64,
        dropout=0.0,
        attention_dropout=0.0,
        activation_dropout=0.0,
        pad_token_id=0,
        bos_token_id=2,
        eos_token_id=3,
        decoder_start_token_id=3,
        forced_eos_token_id=None,
    )
    return BartForConditionalGeneration(config).eval()


def make_gpt2(seed: int = 0):
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(seed)
    config = GPT2Config(
        vocab_size=len(VOCAB),
        n_positions=64,
        n_embd=32,
        n_layer=2,
        n_head=2,
        resid_pdrop=0.0,
        embd_pdrop=0.0,
        attn_pdrop=0.0,
        bos_token_id=2,
        eos_token_id=3,
    )
    return GPT2LMHeadModel(config).eval()


@pytest.fixture
def masked_model(tokenizer):
    return MaskedSubstitutionModel(make_bert(), tokenizer)


@pytest.fixture
def bart_scorer(tokenizer):
    config = ScorerConfig(model_id="tiny-bart", batch_size=1)
    return SentenceScorer(config, model=make_bart(), tokenizer=tokenizer, cache=ScoreCache())


@pytest.fixture
def gpt2_scorer(tokenizer):
    config = ScorerConfig(
        backend=Backend.CAUSAL_LM_PROMPTED,
        model_id="tiny-gpt2",
        prompt_template=PromptManager().get_paraphrase_template(),
        batch_size=1,
    )
    return SentenceScorer(config, model=make_gpt2(), tokenizer=tokenizer, cache=ScoreCache())


@pytest.fixture
def saved_models(tmp_path, tokenizer):
    """Tiny masked LM and seq2seq scorer saved to disk, loadable by model id."""
    bert_dir = tmp_path / "tiny-bert"
    bart_dir = tmp_path / "tiny-bart"
    make_bert().save_pretrained(bert_dir)
    tokenizer.save_pretrained(bert_dir)
    make_bart().save_pretrained(bart_dir)
    tokenizer.save_pretrained(bart_dir)
    return SimpleNamespace(bert=str(bert_dir), bart=str(bart_dir))


class StubCompletions:
    """Replays canned chat answers; an Exception item is raised instead."""

    def __init__(self, answers):
        self.answers = list(answers)
        self.calls = []

    def create(self, **kwargs):
        self.calls.append(kwargs)
        answer = self.answers.pop(0)
        if isinstance(answer, Exception):
            raise answer
        message = SimpleNamespace(content=answer)
        return SimpleNamespace(choices=[SimpleNamespace(message=message)])


class StubOpenAI:
    def __init__(self, answers):
        self.chat = SimpleNamespace(completions=StubCompletions(answers))

    @property
    def calls(self):
        return self.chat.completions.calls


@pytest.fixture
def stub_openai():
    return StubOpenAI


@pytest.fixture
def fixture_path():
    return lambda name: os.path.join(FIXTURES_DIR, name)
