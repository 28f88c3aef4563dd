import csv
import json
import os

import pytest
import yaml

from src.cli import run


@pytest.fixture
def run_config(tmp_path, saved_models, fixture_path):
    """Write a YAML config over the tiny saved models; returns a builder."""

    def build(dataset="eval5.jsonl", name="run.yaml", **extra):
        raw = {
            "model": {"model_id": saved_models.bert},
            "scorer": {"model_id": saved_models.bart, "batch_size": 2},
            "sampling": {"pool_size": 3},
            "data": {"path": fixture_path(dataset), "format": "SWS"},
            "out_dir": str(tmp_path / "out"),
        }
        raw.update(extra)
        path = tmp_path / name
        path.write_text(yaml.safe_dump(raw), encoding="utf-8")
        return str(path)

    return build


def read_json(path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def test_missing_config_exits_with_2(tmp_path, capsys):
    assert run(["evaluate", "--config", str(tmp_path / "nope.yaml")]) == 2
    assert capsys.readouterr().err.startswith("CONFIG_ERROR")


def test_unknown_config_key_exits_with_2(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("train:\n  epoch: 3\n", encoding="utf-8")
    assert run(["train", "--config", str(path)]) == 2
    assert "train.epoch" in capsys.readouterr().err


def test_module_error_exits_with_1(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "text": "The cat.", "annotations": [{"pos": 9}]}\n', encoding="utf-8")
    config = tmp_path / "run.yaml"
    config.write_text(f"out_dir: {tmp_path / 'out'}\n", encoding="utf-8")
    assert run(["evaluate", "--config", str(config), "--input", str(bad)]) == 1
    assert capsys.readouterr().err.startswith("PARSE_ERROR: line 1")


def test_evaluate_writes_metric_report_and_manifest(run_config, tmp_path):
    assert run(["evaluate", "--config", run_config()]) == 0
    out = tmp_path / "out"
    report = read_json(out / "metric_report.json")
    # 5 sentences x 5 sampled sites
    assert report["n_tokens"] == 25
    assert report["dataset"] == "SWS"
    assert -1.0 <= report["cs_median"] <= 1.0
    assert report["abr_median"] > 0
    assert os.path.exists(out / "cs_histogram.csv")

    manifest = read_json(out / "run_manifest.json")
    assert manifest["command"] == "evaluate"
    assert manifest["seed"] == 0
    assert len(manifest["config_hash"]) == 64
    assert "torch" in manifest["versions"]


def test_seed_flag_is_recorded(run_config, tmp_path):
    assert run(["evaluate", "--config", run_config(), "--seed", "4"]) == 0
    assert read_json(tmp_path / "out" / "run_manifest.json")["seed"] == 4


def test_suggest_then_stat_from_suggestions(run_config, tmp_path):
    config = run_config(dataset="sws.jsonl")
    assert run(["suggest", "--config", config]) == 0
    suggestions = tmp_path / "out" / "suggestions.jsonl"
    rows = [json.loads(line) for line in suggestions.read_text(encoding="utf-8").splitlines()]
    assert {row["sentence_id"] for row in rows} == {"s1", "s2", "s3"}
    assert all(len(row["candidates"]) == 3 for row in rows)

    stat_out = tmp_path / "stat"
    assert run(["stat", "--config", config, "--suggestions", str(suggestions),
                "--k-s", "3", "--out", str(stat_out)]) == 0
    report = read_json(stat_out / "stat_report.json")
    assert report["k_s"] == 3
    assert report["n_tokens"] == len(rows)
    assert sum(report["group_counts"].values()) == len(rows)
    lines = (stat_out / "stratification.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == len(rows)
    assert all(json.loads(line)["p_value"] is not None for line in lines)


def test_stat_from_model_uses_k_s_candidates(run_config, tmp_path):
    assert run(["stat", "--config", run_config(dataset="sws.jsonl"), "--k-s", "10"]) == 0
    out = tmp_path / "out"
    assert read_json(out / "stat_report.json")["k_s"] == 10
    p_values = read_json(out / "distributions.json")["p_value"]
    assert p_values
    # Nine alternatives per token, not the five-candidate decision pool
    assert all(p * 9 == pytest.approx(round(p * 9)) for p in p_values)


def test_stat_rejects_bad_k_s(run_config, capsys):
    assert run(["stat", "--config", run_config(dataset="sws.jsonl"), "--k-s", "1", "--suggestions", "x"]) == 2


def test_score_with_comparison(run_config, tmp_path):
    pairs = tmp_path / "pairs.jsonl"
    pairs.write_text("\n".join(json.dumps(p) for p in [
        {"original": "The cat sat on the mat.", "modified": "The dog sat on the mat."},
        {"original": "The cat sat on the mat.", "modified": "The cow ran."},
        {"original": "We walked home.", "modified": "They walked home on a good day."},
    ]) + "\n", encoding="utf-8")
    config = run_config()
    assert run(["score", "--config", config, "--input", str(pairs), "--compare-config", config]) == 0
    report = read_json(tmp_path / "out" / "score_report.json")
    assert report["n_pairs"] == 3
    assert report["spearman"] == pytest.approx(1.0)
    scores = (tmp_path / "out" / "scores.jsonl").read_text(encoding="utf-8").splitlines()
    assert all(json.loads(line)["score"] <= 0 for line in scores)


def test_score_cache_file_is_filled(run_config, tmp_path):
    cache = tmp_path / "cache.jsonl"
    assert run(["evaluate", "--config", run_config(), "--scorer-cache", str(cache)]) == 0
    assert len(cache.read_text(encoding="utf-8").splitlines()) > 0


def test_report_summarises_runs(run_config, tmp_path):
    assert run(["evaluate", "--config", run_config()]) == 0
    report_dir = tmp_path / "report"
    assert run(["report", "--input", str(tmp_path / "out"), "--out", str(report_dir)]) == 0
    with open(report_dir / "summary_table.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert rows[0]["dataset"] == "SWS"
    assert rows[0]["n_tokens"] == "25"
    assert any(name.endswith("_cs.png") for name in os.listdir(report_dir))


def test_report_needs_input(capsys):
    assert run(["report"]) == 2
