"""
Command-line experiment runner.

    python main.py <command> --config run.yaml [options]

Commands: train, suggest, evaluate, stat, score, baseline-llm, report.
Exit codes: 0 success, 1 module error (its code on stderr), 2 bad config.
"""

import argparse
import json
import logging
import os
import sys
from collections import defaultdict
from dataclasses import replace
from typing import List, Optional, Sequence

from src.candidates import MaskedSubstitutionModel
from src.config import ExperimentConfig, config_hash, load_config
from src.core import tokenize
from src.data import load, sample_corpus
from src.errors import ConfigError, SubstitutionError
from src.experiments import evaluate_model, evaluate_pools, model_predictor, model_reference_pool, run_statistic
from src.llm_baselines import LLMBaselineClient, to_decisions
from src.reports import (
    build_report,
    write_json,
    write_jsonl,
    write_manifest,
    write_metric_report,
    write_statistic_report,
)
from src.scorer import ScoreCache, SentenceScorer
from src.stats import spearman
from src.subst import suggest, suggestion_record, suggestions_from_records
from src.train import Trainer

logger = logging.getLogger(__name__)

COMMANDS = ["train", "suggest", "evaluate", "stat", "score", "baseline-llm", "report"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sws-align", description="Label-free word substitution experiments")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="YAML run configuration")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", help="output directory (overrides out_dir)")
    parser.add_argument("--scorer-cache", help="JSON-lines score cache file")
    parser.add_argument("--k-s", type=int, help="reference set size for the p-value statistic")
    parser.add_argument("--alpha", type=float, help="significance level (default 0.01)")
    parser.add_argument("--input", help="dataset, pairs file or run directory, depending on the command")
    parser.add_argument("--format", help="dataset format: SWS, LS07, LS14, XSUM")
    parser.add_argument("--model", help="masked LM id or checkpoint directory")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--suggestions", help="stat: read suggestion JSON-lines instead of running the model")
    parser.add_argument("--compare-config", help="score: second config whose scorer is compared by Spearman")
    parser.add_argument("--ranked", action="store_true", help="baseline-llm: use the ranked prompt")
    parser.add_argument("--evaluate", action="store_true", help="baseline-llm: also write a metric report")
    parser.add_argument("--renormalized", action="store_true", help="evaluate: CS over pool-normalized probabilities")
    return parser


def _dataset(config: ExperimentConfig, args) -> tuple:
    path = args.input or config.data.path
    fmt = args.format or config.data.format
    if not path:
        raise ConfigError("no dataset: set data.path or pass --input")
    return list(load(path, fmt)), fmt.upper()


def _scorer(scorer_config, args):
    cache = ScoreCache(args.scorer_cache) if args.scorer_cache else ScoreCache()
    return SentenceScorer(scorer_config, cache=cache)


def _model(config: ExperimentConfig, args):
    model = MaskedSubstitutionModel.from_pretrained(
        args.model or config.model.model_id,
        dropout_rate=config.train.dropout_rate,
        device=config.model.device,
    )
    model.eval()
    return model


def _model_name(config: ExperimentConfig, args) -> str:
    return args.model or config.model.model_id


def cmd_train(config: ExperimentConfig, args, out_dir: str):
    records, _ = _dataset(config, args)
    corpus = sample_corpus(records, config.train.corpus_sample, config.train.rng_seed)
    heldout = None
    if config.data.heldout_path:
        heldout = list(load(config.data.heldout_path, config.data.format))[:config.data.heldout_size]
    policy = _model(config, args)
    trainer = Trainer(policy, _scorer(config.scorer, args), config.train, out_dir,
                      heldout=heldout, heldout_plan=config.sampling,
                      eligibility_filter=config.sampling.eligibility_filter)
    result = trainer.fine_tune(corpus)
    write_json(os.path.join(out_dir, "train_report.json"), {
        "loss_mode": config.train.loss_mode.value,
        "epoch_losses": result.epoch_losses,
        "checkpoints": result.checkpoints,
        "n_steps": result.n_steps,
        "metrics": result.metrics_path,
    })


def cmd_suggest(config: ExperimentConfig, args, out_dir: str):
    records, _ = _dataset(config, args)
    model = _model(config, args)
    rows = []
    for record in records:
        for site, decision, pool in suggest(record.sentence, model, pool_size=config.sampling.pool_size):
            rows.append(suggestion_record(record.sentence_id, site, decision, pool))
    write_jsonl(os.path.join(out_dir, "suggestions.jsonl"), rows)
    n_replace = sum(1 for row in rows if row["action"] == "replace")
    logger.info(f"✅ {n_replace} of {len(rows)} sites replaced")


def cmd_evaluate(config: ExperimentConfig, args, out_dir: str):
    records, fmt = _dataset(config, args)
    model = _model(config, args)
    scorer = _scorer(config.scorer, args)
    result = evaluate_model(model, scorer, records, config.sampling, renormalized=args.renormalized, progress=True)
    report = write_metric_report(out_dir, fmt, _model_name(config, args), result)
    logger.info(f"📊 CS median {report['cs_median']}, ABR median {report['abr_median']}, {report['n_tokens']} tokens")


def _suggestion_predictor(path: str):
    by_sentence = defaultdict(list)
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                by_sentence[row["sentence_id"]].append(row)
    return lambda record: suggestions_from_records(record.sentence, by_sentence.get(record.sentence_id, []))


def cmd_stat(config: ExperimentConfig, args, out_dir: str):
    k_s = args.k_s or config.stat.k_s
    alpha = args.alpha if args.alpha is not None else config.stat.alpha
    if k_s < 2 or not 0 < alpha < 1:
        raise ConfigError("--k-s must be >= 2 and --alpha must lie in (0, 1)")
    records, _ = _dataset(config, args)
    reference_pool = None
    if args.suggestions:
        predictor = _suggestion_predictor(args.suggestions)
    else:
        model = _model(config, args)
        predictor = model_predictor(model)
        reference_pool = model_reference_pool(model)
    result = run_statistic(predictor, _scorer(config.scorer, args), records, k_s, alpha,
                           config.stat.min_alternatives, progress=True, reference_pool=reference_pool)
    report = write_statistic_report(out_dir, result)
    logger.info(f"📊 Group counts: {report['group_counts']}")


def cmd_score(config: ExperimentConfig, args, out_dir: str):
    if not args.input:
        raise ConfigError("score needs --input with {\"original\", \"modified\"} JSON lines")
    pairs = []
    with open(args.input, "r", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                row = json.loads(line)
                pairs.append((tokenize(row["original"]), tokenize(row["modified"])))

    scorer = _scorer(config.scorer, args)
    scores = [scorer.score(original, modified) for original, modified in pairs]
    write_jsonl(os.path.join(out_dir, "scores.jsonl"), (
        {"original": o.text, "modified": m.text, "score": s} for (o, m), s in zip(pairs, scores)
    ))
    report = {"scorer_id": scorer.scorer_id, "n_pairs": len(pairs)}
    if args.compare_config:
        other = _scorer(load_config(args.compare_config).scorer, args)
        other_scores = [other.score(original, modified) for original, modified in pairs]
        report["compare_scorer_id"] = other.scorer_id
        report["spearman"] = spearman(scores, other_scores)
        logger.info(f"📊 Spearman agreement: {report['spearman']:.4f}")
    write_json(os.path.join(out_dir, "score_report.json"), report)


def cmd_baseline_llm(config: ExperimentConfig, args, out_dir: str):
    records, fmt = _dataset(config, args)
    llm_config = config.llm
    if not llm_config.archive_path:
        llm_config = replace(llm_config, archive_path=os.path.join(out_dir, "llm_archive.jsonl"))
    client = LLMBaselineClient(llm_config)
    results = client.prompt_many([r.sentence for r in records], ranked=args.ranked)

    rows, pools = [], []
    for record, result in zip(records, results):
        for site, decision, pool in to_decisions(result.suggestions, record.sentence):
            rows.append(suggestion_record(record.sentence_id, site, decision, pool))
            if pool is not None:
                pools.append(pool)
    write_jsonl(os.path.join(out_dir, "suggestions.jsonl"), rows)
    write_json(os.path.join(out_dir, "llm_report.json"), {
        "model": llm_config.model,
        "ranked": args.ranked,
        "n_sentences": len(records),
        "retries": sum(r.retry_count for r in results),
        "dropped_words": sum(len(r.dropped) for r in results),
    })
    if args.evaluate and pools:
        evaluation = evaluate_pools(_scorer(config.scorer, args), pools)
        write_metric_report(out_dir, fmt, llm_config.model, evaluation)


def cmd_report(args, out_dir: str):
    if not args.input:
        raise ConfigError("report needs --input, a directory of run outputs")
    build_report(args.input, out_dir)


HANDLERS = {
    "train": cmd_train,
    "suggest": cmd_suggest,
    "evaluate": cmd_evaluate,
    "stat": cmd_stat,
    "score": cmd_score,
    "baseline-llm": cmd_baseline_llm,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one command, return the exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(message)s", datefmt="%H:%M:%S")

    try:
        if args.command == "report":
            cmd_report(args, args.out or "report")
            return 0
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        out_dir = args.out or config.out_dir
        os.makedirs(out_dir, exist_ok=True)

        write_manifest(out_dir, args.command, argv, config_hash(config), config.seed)
        logger.info(f"🚀 {args.command} -> {out_dir}")
        HANDLERS[args.command](config, args, out_dir)
        logger.info(f"✅ {args.command} finished")
        return 0
    except ConfigError as e:
        print(f"{ConfigError.code}: {e}", file=sys.stderr)
        return 2
    except SubstitutionError as e:
        print(f"{e.code}: {e.message}", file=sys.stderr)
        return 1


def main(argv: Optional[List[str]] = None) -> int:
    return run(argv)
