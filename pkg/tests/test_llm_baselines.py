import json
from types import SimpleNamespace

import pytest

from src.core import Action, tokenize
from src.errors import ClientError, ConfigError, MalformedResponseError
from src.llm_baselines import (
    API_KEY_ENV,
    LLMBaselineClient,
    LLMClientConfig,
    rank_probabilities,
    repair_json,
    to_decisions,
    validate_suggestions,
)
from src.prompt_manager import PromptManager

SENTENCE = tokenize("The results were very important.")


def make_client(stub, **config):
    return LLMBaselineClient(LLMClientConfig(**config), client=stub)


def test_valid_answer_is_parsed(stub_openai):
    stub = stub_openai(['{"important": ["crucial", "vital"]}'])
    result = make_client(stub).prompt_suggestions(SENTENCE)
    assert result.suggestions == {"important": ["crucial", "vital"]}
    assert result.retry_count == 0
    assert result.dropped == []

    (call,) = stub.calls
    assert call["model"] == "local-model"
    assert call["temperature"] == 0.0
    assert call["messages"] == [
        {"role": "user", "content": PromptManager().render_suggestion_prompt(SENTENCE.text, ranked=False)}
    ]


def test_ranked_prompt_is_sent(stub_openai):
    stub = stub_openai(['{"important": ["crucial"]}'])
    make_client(stub).prompt_suggestions(SENTENCE, ranked=True)
    assert "ranked in order of the degree of improvement" in stub.calls[0]["messages"][0]["content"]


def test_words_outside_the_sentence_are_dropped(stub_openai):
    stub = stub_openai(['{"important": ["crucial"], "banana": ["apple"]}'])
    result = make_client(stub).prompt_suggestions(SENTENCE)
    assert result.suggestions == {"important": ["crucial"]}
    assert result.dropped == ["banana"]


def test_malformed_answers_are_retried(stub_openai):
    stub = stub_openai(["not json at all", "{broken", '{"very": ["really"]}'])
    result = make_client(stub, max_retries=3).prompt_suggestions(SENTENCE)
    assert result.retry_count == 2
    assert result.suggestions == {"very": ["really"]}
    assert len(stub.calls) == 3


def test_all_attempts_malformed(stub_openai):
    stub = stub_openai(["nope", "still nope", "[1, 2]"])
    with pytest.raises(MalformedResponseError) as excinfo:
        make_client(stub, max_retries=3).prompt_suggestions(SENTENCE)
    assert excinfo.value.attempts == 3
    assert len(stub.calls) == 3


def test_transport_failure_is_a_client_error(stub_openai):
    stub = stub_openai([ConnectionError("connection refused")])
    with pytest.raises(ClientError):
        make_client(stub).prompt_suggestions(SENTENCE)


def test_answers_are_archived(stub_openai, tmp_path):
    archive = tmp_path / "llm.jsonl"
    stub = stub_openai(["garbage", '{"very": ["really"]}'])
    make_client(stub, archive_path=str(archive)).prompt_suggestions(SENTENCE)
    records = [json.loads(line) for line in archive.read_text(encoding="utf-8").splitlines()]
    assert [r["attempt"] for r in records] == [1, 2]
    assert records[0]["response"] == "garbage"
    assert records[1]["prompt"].endswith(SENTENCE.text)


class EchoCompletions:
    """Suggests a word for the second-to-last word of the prompt's sentence."""

    def create(self, **kwargs):
        words = kwargs["messages"][0]["content"].split()
        answer = json.dumps({words[-2]: ["fox"]})
        return SimpleNamespace(choices=[SimpleNamespace(message=SimpleNamespace(content=answer))])


def test_prompt_many_keeps_request_order():
    client = LLMBaselineClient(LLMClientConfig(max_concurrency=3),
                               client=SimpleNamespace(chat=SimpleNamespace(completions=EchoCompletions())))
    sentences = [tokenize(text) for text in ["The cat sat.", "The dog ran.", "A bird sang.", "One cow ate."]]
    results = client.prompt_many(sentences)
    assert [list(r.suggestions) for r in results] == [["cat"], ["dog"], ["bird"], ["cow"]]


def test_repair_json():
    assert repair_json('{"a": ["b"]}') == {"a": ["b"]}
    assert repair_json('```json\n{"a": ["b"]}\n```') == {"a": ["b"]}
    assert repair_json('Sure! Here you go: {"a": ["b"]} Hope this helps.') == {"a": ["b"]}
    assert repair_json("{“a”: [“b”]}") == {"a": ["b"]}
    assert repair_json("no json here") is None
    assert repair_json("[1, 2]") is None


def test_validate_suggestions():
    kept, dropped = validate_suggestions({"Important": "crucial", "very": [" really ", "", 3], "zzz": ["a"]}, SENTENCE)
    assert kept == {"Important": ["crucial"], "very": ["really"]}
    assert dropped == ["zzz"]


def test_rank_probabilities():
    assert rank_probabilities(3) == pytest.approx([6 / 11, 3 / 11, 2 / 11])
    assert rank_probabilities(1) == [1.0]


def test_to_decisions_marks_first_occurrence_only():
    sentence = tokenize("The results were important, and it was important.")
    results = to_decisions({"important": ["crucial", "vital"]}, sentence)
    assert len(results) == len(sentence)
    assert [site.position for site, _, _ in results] == list(range(len(sentence)))

    site, decision, pool = results[3]
    assert decision.action is Action.REPLACE
    assert decision.replacement == "crucial"
    assert pool.candidates == ("crucial", "vital")
    assert pool.probabilities == pytest.approx((2 / 3, 1 / 3))
    assert pool.original_probability == 0.0

    _, later, later_pool = results[8]
    assert later.action is Action.KEEP
    assert later_pool is None


def test_to_decisions_matches_case_and_skips_the_original():
    sentence = tokenize("Important results were very good.")
    results = to_decisions({"important": ["important", "key"], "very": ["very"]}, sentence)
    assert results[0][1].replacement == "Key"
    assert results[3][1].action is Action.KEEP


def test_client_config_validation():
    with pytest.raises(ConfigError):
        LLMClientConfig(max_retries=0)
    with pytest.raises(ConfigError):
        LLMClientConfig(max_concurrency=0)
    with pytest.raises(ConfigError):
        LLMClientConfig(requests_per_minute=0)


def test_default_client_reads_key_from_environment(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "test-key")
    client = LLMBaselineClient()
    assert client.client.api_key == "test-key"
    assert str(client.client.base_url).startswith("http://localhost:1234/v1")
