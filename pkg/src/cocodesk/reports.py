"""Plot-ready CSV and JSON writers.

CSV files start with ``#`` comment lines: one per column description, then
the resolved run configuration as JSON. Numbers use 17 significant digits.
"""
import json

import numpy as np

from .data import fmt


def dump_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def write_csv(path, columns, rows, config):
    lines = [f"# {name}: {desc}" for name, desc in columns]
    lines.append("# config: " + json.dumps(config, sort_keys=True))
    lines.append(",".join(name for name, _ in columns))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def write_histogram_csv(path, stats, config):
    edges = stats.bin_edges
    rows = zip(edges[:-1], edges[1:], stats.positive_counts, stats.negative_counts)
    write_csv(path, [
        ("bin_left", "lower cosine edge of the bin"),
        ("bin_right", "upper cosine edge of the bin"),
        ("positive_count", "same-identity pairs in the bin"),
        ("negative_count", "different-identity pairs in the bin"),
    ], ([lo, hi, str(int(p)), str(int(n))] for lo, hi, p, n in rows), config)


def write_roc_csv(path, result, config):
    write_csv(path, [
        ("threshold", "pairs scoring above this are called same"),
        ("fpr", "false positive rate"),
        ("tpr", "true positive rate"),
    ], zip(result.thresholds, result.fpr, result.tpr), config)


def write_cmc_csv(path, result, config):
    write_csv(path, [
        ("distractors", "number of distractors added to the gallery"),
        ("top1_accuracy", "rank-1 identification rate averaged over trials and probes"),
    ], ([str(c), a] for c, a in zip(result.distractor_counts, result.top1_accuracy)), config)


def finite_or_none(x):
    x = float(x)
    return x if np.isfinite(x) else None
