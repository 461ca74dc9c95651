"""Classifier evaluation metrics and the baseline allocation strategies.

AUC follows the Mann-Whitney formulation (ties count half). PR-AUC is average
precision with step interpolation, computed at every distinct score threshold.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    AllocationConfig,
    AllocationPlan,
    DataError,
    ItemRecord,
    PlanEntry,
    Region,
    cost_of,
)


@dataclass(frozen=True)
class ScoredLabel:
    score: float
    label: int
    bucket: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise DataError("score must lie in [0, 1]")
        if self.label not in (0, 1):
            raise DataError("label must be 0 or 1")


@dataclass(frozen=True)
class BucketMetrics:
    bucket: int
    accuracy: float
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MetricsReport:
    auc: float
    pr_auc: float
    per_bucket: tuple[BucketMetrics, ...]
    pr_curve: tuple[tuple[float, float], ...]  # (recall, precision) points


def auc(scored: Sequence[ScoredLabel]) -> float:
    """Probability that a random positive outscores a random negative, ties half."""
    labels = np.array([s.label for s in scored])
    scores = np.array([s.score for s in scored])
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative label")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum = float(ranks[labels == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def pr_metrics(
    scored: Sequence[ScoredLabel], threshold: float = 0.5
) -> tuple[float, float, float, float]:
    """(accuracy, precision, recall, f1) at score >= threshold.

    Precision is 1.0 when nothing is predicted positive. Recall is undefined
    without positive labels, which is an error here.
    """
    if not scored:
        raise DataError("empty input")
    n_pos = sum(s.label for s in scored)
    if n_pos == 0:
        raise DataError("recall undefined: no positive labels")
    tp = fp = tn = fn = 0
    for s in scored:
        predicted = s.score >= threshold
        if predicted and s.label == 1:
            tp += 1
        elif predicted:
            fp += 1
        elif s.label == 1:
            fn += 1
        else:
            tn += 1
    accuracy = (tp + tn) / len(scored)
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / n_pos
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return accuracy, precision, recall, f1


def pr_curve_and_auc(
    scored: Sequence[ScoredLabel],
) -> tuple[list[tuple[float, float]], float]:
    """Precision/recall at every distinct score threshold plus average precision."""
    n_pos = sum(s.label for s in scored)
    if n_pos == 0:
        raise DataError("PR curve needs at least one positive label")
    ordered = sorted(scored, key=lambda s: -s.score)
    points: list[tuple[float, float]] = []
    ap = 0.0
    tp = 0
    seen = 0
    prev_recall = 0.0
    i = 0
    while i < len(ordered):
        j = i
        while j + 1 < len(ordered) and ordered[j + 1].score == ordered[i].score:
            j += 1
        for k in range(i, j + 1):
            tp += ordered[k].label
            seen += 1
        precision = tp / seen
        recall = tp / n_pos
        points.append((recall, precision))
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j + 1
    return points, ap


def metrics_report(
    scored: Sequence[ScoredLabel], threshold: float = 0.5
) -> MetricsReport:
    """Full report: AUC, PR-AUC, per-bucket confusion metrics, PR curve.

    Buckets with no positive labels are omitted from the per-bucket table
    because recall is undefined there.
    """
    overall_auc = auc(scored)
    curve, ap = pr_curve_and_auc(scored)
    buckets = sorted({s.bucket for s in scored})
    per_bucket = []
    for b in buckets:
        subset = [s for s in scored if s.bucket == b]
        if sum(s.label for s in subset) == 0:
            continue
        accuracy, precision, recall, f1 = pr_metrics(subset, threshold)
        per_bucket.append(
            BucketMetrics(
                bucket=b, accuracy=accuracy, precision=precision, recall=recall, f1=f1
            )
        )
    return MetricsReport(
        auc=overall_auc,
        pr_auc=ap,
        per_bucket=tuple(per_bucket),
        pr_curve=tuple(curve),
    )


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "auc": report.auc,
        "pr_auc": report.pr_auc,
        "per_bucket": [
            {
                "bucket": m.bucket,
                "accuracy": m.accuracy,
                "precision": m.precision,
                "recall": m.recall,
                "f1": m.f1,
            }
            for m in report.per_bucket
        ],
        "pr_curve": [[r, p] for r, p in report.pr_curve],
    }


def write_pr_curve_csv(report: MetricsReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recall", "precision"])
        for recall, precision in report.pr_curve:
            writer.writerow([repr(recall), repr(precision)])


def write_metrics_json(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


# ---------------------------------------------------------------------------
# Baseline allocation strategies
# ---------------------------------------------------------------------------

def uniform_allocate(
    corpus: Sequence[ItemRecord], config: AllocationConfig
) -> AllocationPlan:
    """Equal traffic for everyone: the no-model baseline.

    Each item gets X = clamp(T // N, min_cap, max_cap), granted in id order
    for as long as both the traffic budget and the cost ceiling allow; the
    rest stay unfunded.
    """
    if not corpus:
        raise DataError("uniform allocation needs a non-empty corpus")
    records = sorted(corpus, key=lambda r: r.id)
    share = config.total_budget // len(records)
    x_uniform = max(min(share, config.max_cap), config.min_cap)
    entries = []
    remaining = config.total_budget
    cost_left = config.max_cost
    unit = cost_of(x_uniform, config)
    for rec in records:
        if x_uniform <= remaining and unit <= cost_left + 1e-12:
            entries.append(
                PlanEntry(
                    item_id=rec.id,
                    region=Region.UNIFORM,
                    granted=x_uniform,
                    requested=x_uniform,
                )
            )
            remaining -= x_uniform
            cost_left -= unit
        else:
            entries.append(
                PlanEntry(item_id=rec.id, region=Region.UNFUNDED, granted=0)
            )
    total = sum(e.granted for e in entries)
    total_cost = sum(cost_of(e.granted, config) for e in entries)
    return AllocationPlan(
        entries=tuple(entries), total_allocated=total, total_cost=total_cost
    )


def oracle_allocate(latents: Iterable, config: AllocationConfig) -> AllocationPlan:
    """Full-information upper bound: fund cheapest true thresholds first.

    `latents` supplies objects with `id` and `true_threshold` attributes (the
    simulator's ground truth). Items whose threshold exceeds max_cap can never
    be discovered within the cap and are excluded; others are funded at
    clamp(threshold, min_cap, max_cap), ascending, until traffic or cost binds.
    """
    items = sorted(latents, key=lambda it: (it.true_threshold, it.id))
    granted: dict[str, int] = {}
    remaining = config.total_budget
    cost_left = config.max_cost
    for it in items:
        granted[it.id] = 0
        if it.true_threshold > config.max_cap:
            continue
        needed = int(min(max(it.true_threshold, config.min_cap), config.max_cap))
        if needed > remaining or cost_of(needed, config) > cost_left + 1e-12:
            continue
        granted[it.id] = needed
        remaining -= needed
        cost_left -= cost_of(needed, config)
    entries = tuple(
        PlanEntry(
            item_id=it.id,
            region=Region.ORACLE if granted[it.id] > 0 else Region.UNFUNDED,
            granted=granted[it.id],
            requested=granted[it.id] if granted[it.id] > 0 else None,
        )
        for it in sorted(items, key=lambda it: it.id)
    )
    total = sum(e.granted for e in entries)
    total_cost = sum(cost_of(e.granted, config) for e in entries)
    return AllocationPlan(
        entries=entries, total_allocated=total, total_cost=total_cost
    )
