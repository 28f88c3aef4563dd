"""
Report files for every command, and the cross-run summary table and plots.
"""

import csv
import json
import logging
import os
import platform
from importlib import metadata
from typing import Any, Dict, Iterable, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from src.experiments import EvaluationResult, StatisticResult
from src.metrics import DEFAULT_BINS, Summary, aggregate

logger = logging.getLogger(__name__)

METRIC_REPORT = "metric_report.json"
STAT_REPORT = "stat_report.json"
DISTRIBUTIONS = "distributions.json"
MANIFEST = "run_manifest.json"
SUMMARY_COLUMNS = ["model", "dataset", "cs_median", "abr_median", "top2_median", "n_tokens"]
VERSIONED_PACKAGES = ["torch", "transformers", "numpy", "scipy", "openai", "PyYAML"]


def write_json(path: str, obj: Any):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False) + "\n")


def write_histogram_csv(path: str, summary: Summary):
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_left", "bin_right", "count"])
        writer.writerows(summary.histogram)


def package_versions() -> Dict[str, Optional[str]]:
    versions = {"python": platform.python_version()}
    for name in VERSIONED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def write_manifest(out_dir: str, command: str, argv: Sequence[str], config_digest: str, seed: int) -> str:
    path = os.path.join(out_dir, MANIFEST)
    write_json(path, {
        "command": command,
        "argv": list(argv),
        "config_hash": config_digest,
        "seed": seed,
        "versions": package_versions(),
    })
    return path


def write_metric_report(out_dir: str, dataset: str, model: str, result: EvaluationResult) -> Dict[str, Any]:
    """metric_report.json, one histogram CSV per metric and the raw distributions."""
    os.makedirs(out_dir, exist_ok=True)
    summaries = result.summaries()
    distribution_files = []
    for name, summary in summaries.items():
        if summary is None:
            continue
        path = os.path.join(out_dir, f"{name}_histogram.csv")
        write_histogram_csv(path, summary)
        distribution_files.append(path)

    def median(name):
        return summaries[name].median if summaries[name] else None

    report = {
        "dataset": dataset,
        "model": model,
        "cs_median": median("cs"),
        "abr_median": median("abr"),
        "top2_median": median("top2"),
        "n_tokens": result.n_tokens,
        "n_excluded": result.n_excluded,
        "summaries": {name: (s.to_dict() if s else None) for name, s in summaries.items()},
        "distribution_files": distribution_files,
    }
    write_json(os.path.join(out_dir, METRIC_REPORT), report)
    write_json(os.path.join(out_dir, DISTRIBUTIONS), {
        "cs": result.cs_values,
        "abr": result.abr_values,
        "top2": result.top2_values,
    })
    return report


def write_statistic_report(out_dir: str, result: StatisticResult) -> Dict[str, Any]:
    """stat_report.json, per-token stratification.jsonl and the p-value distribution."""
    os.makedirs(out_dir, exist_ok=True)
    write_jsonl(os.path.join(out_dir, "stratification.jsonl"), (
        {"sentence_id": t.sentence_id, "position": t.position, "group": t.group.value, "p_value": t.p_value}
        for t in result.tokens
    ))
    report = {
        "k_s": result.k_s,
        "alpha": result.alpha,
        "n_tokens": len(result.tokens),
        "group_counts": {label.value: count for label, count in result.counts.items()},
        "stratification": result.table,
        "significance_by_group": result.significance,
        "overall_significance": result.overall_significance,
    }
    write_json(os.path.join(out_dir, STAT_REPORT), report)
    write_json(os.path.join(out_dir, DISTRIBUTIONS), {"p_value": result.p_values})
    return report


def plot_histogram(values: Sequence[float], path: str, title: str, bins: int = DEFAULT_BINS):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=bins, color="#4477aa", edgecolor="white")
    ax.axvline(aggregate(values).median, color="#cc3311", linestyle="--", label="median")
    ax.set_title(title)
    ax.set_ylabel("tokens")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def build_report(input_dir: str, out_dir: str) -> List[str]:
    """
    Collect every run under `input_dir` into summary_table.csv and histogram PNGs.

    Returns:
        Paths of the files written
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    written = []
    for root, _, files in sorted(os.walk(input_dir)):
        if DISTRIBUTIONS not in files:
            continue
        relative = os.path.relpath(root, input_dir)
        run_name = os.path.basename(os.path.abspath(input_dir)) if relative == "." else relative.replace(os.sep, "_")
        if METRIC_REPORT in files:
            with open(os.path.join(root, METRIC_REPORT), "r", encoding="utf-8") as f:
                report = json.load(f)
            rows.append({column: report.get(column) for column in SUMMARY_COLUMNS})
        with open(os.path.join(root, DISTRIBUTIONS), "r", encoding="utf-8") as f:
            distributions = json.load(f)
        for metric, values in distributions.items():
            if not values:
                continue
            path = os.path.join(out_dir, f"{run_name}_{metric}.png")
            plot_histogram(values, path, f"{run_name}: {metric}")
            written.append(path)

    summary_path = os.path.join(out_dir, "summary_table.csv")
    with open(summary_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(sorted(rows, key=lambda r: (str(r["model"]), str(r["dataset"]))))
    written.insert(0, summary_path)
    logger.info(f"📊 Wrote {len(rows)} summary rows and {len(written) - 1} plots to {out_dir}")
    return written
