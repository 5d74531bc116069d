"""Machine-readable reports and the figures rendered alongside them.

Metric reports are written as JSON (stable key order, metrics rounded to 4
decimals) and as a TSV row of model x dataset x metric mirroring the usual
results-table layout. Curve tables get a CSV plus a line figure; per-
relation breakdowns get a bar figure. Serialization is deterministic:
identical results produce byte-identical artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import CurvePoint, ERResult, PRResult, TCResult


def _round4(value: float) -> float:
    return round(float(value), 4)


def _relation_label(relation: int, vocab) -> str | int:
    return vocab.relation_name(relation) if vocab is not None else relation


def er_report(result: ERResult, config: dict, vocab=None) -> dict:
    relations = sorted(result.candidates_considered)
    return {
        "protocol": "er",
        "ks": sorted(result.hits),
        "metrics": {
            "mrr": _round4(result.mrr),
            **{f"hits_at_{k}": _round4(v) for k, v in sorted(result.hits.items())},
        },
        "per_relation": [
            {
                "relation": _relation_label(rel, vocab),
                "n_questions": sum(1 for qr in result.ranks if qr.relation == rel),
                "candidates_considered": result.candidates_considered[rel],
            }
            for rel in relations
        ],
        "config": config,
    }


def pr_report(result: PRResult, config: dict, vocab=None) -> dict:
    return {
        "protocol": "pr",
        "k": result.k,
        "metrics": {
            "map_at_k": _round4(result.map_at_k),
            "hits_at_k": _round4(result.hits_at_k),
        },
        "per_relation": [
            {
                "relation": _relation_label(rel.relation, vocab),
                "n_test": rel.n_test,
                "ap_at_k": _round4(rel.ap),
                "hits_at_k": _round4(rel.hits),
                "weight": _round4(rel.weight),
            }
            for rel in result.per_relation
        ],
        "config": config,
    }


def tc_report(result: TCResult, config: dict, vocab=None) -> dict:
    return {
        "protocol": "tc",
        "metrics": {"accuracy": _round4(result.accuracy)},
        "per_relation": [
            {
                "relation": _relation_label(rel.relation, vocab),
                "threshold": _round4(rel.threshold),
                "accuracy": _round4(rel.accuracy),
                "n_examples": rel.n_examples,
                "fallback_threshold": rel.fallback_threshold,
            }
            for rel in result.per_relation
        ],
        "config": config,
    }


def write_report_json(report: dict, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")


def write_report_tsv(report: dict, path: str | Path, model: str, dataset: str) -> None:
    """One row per run: model, dataset, protocol, then each global metric
    printed with 4 decimal places."""
    metrics = report["metrics"]
    names = list(metrics)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model\tdataset\tprotocol\t" + "\t".join(names) + "\n")
        values = "\t".join(f"{metrics[name]:.4f}" for name in names)
        fh.write(f"{model}\t{dataset}\t{report['protocol']}\t{values}\n")


def read_report_tsv(path: str | Path) -> dict[str, float | str]:
    """Parse a report TSV back into a flat dict (for consistency checks)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        row = fh.readline().rstrip("\n").split("\t")
    out: dict[str, float | str] = {}
    for name, value in zip(header, row):
        try:
            out[name] = float(value)
        except ValueError:
            out[name] = value
    return out


def write_curve_csv(points: Sequence[CurvePoint], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("K,hits_at_k,map_at_k\n")
        for p in points:
            fh.write(f"{p.k},{p.hits_at_k:.4f},{p.map_at_k:.4f}\n")


def render_curve_figure(points: Sequence[CurvePoint], path: str | Path, title: str = "") -> None:
    ks = [p.k for p in points]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(ks, [p.hits_at_k for p in points], marker="o", label="Hits@K")
    ax.plot(ks, [p.map_at_k for p in points], marker="s", label="MAP@K")
    if len(ks) > 1 and ks[-1] / max(ks[0], 1) >= 10:
        ax.set_xscale("log")
    ax.set_xlabel("K")
    ax.set_ylabel("metric")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_relation_bars(result: PRResult, path: str | Path, vocab=None, title: str = "") -> None:
    """Per-relation AP@K and Hits@K bars for a pair-ranking run."""
    rels = result.per_relation
    labels = [
        vocab.relation_name(r.relation) if vocab is not None else str(r.relation) for r in rels
    ]
    x = range(len(rels))
    width = 0.4
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(rels) + 2), 4))
    ax.bar([i - width / 2 for i in x], [r.ap for r in rels], width, label=f"AP@{result.k}")
    ax.bar([i + width / 2 for i in x], [r.hits for r in rels], width, label=f"Hits@{result.k}")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("metric")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
