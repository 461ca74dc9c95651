"""Synthetic cold-start environment with known ground truth.

Each item carries a latent quality q. Its true discovery threshold (the
minimum exploration traffic after which the downstream engine would pick it
up) is 0 for inherently discoverable items, infinite for hopeless ones, and
otherwise log-linear in -q with noise, so better items need less exploration.
Engagement is Bernoulli with rate sigmoid(a*q + b). The allocator only ever
sees static features (a noisy linear readout of q) and realized engagement;
thresholds stay hidden.

`run_experiment` drives the full loop: bootstrap a round of uniform
exploration, then repeatedly retrain the discoverability model on all
accumulated outcomes, re-predict curves with refreshed engagement features,
allocate, serve, and record.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .allocator import allocate
from .core import (
    AllocationConfig,
    AllocationPlan,
    BucketSchema,
    ConfigError,
    DataError,
    EngagementStats,
    ItemRecord,
    bucket_of,
    engagement_features,
    validate_config,
)
from .metrics import oracle_allocate, uniform_allocate
from .model import Hyperparams, TrainingExample, train

STRATEGIES = ("uniform", "model", "oracle")

# Stream tag separating serving randomness from corpus-generation randomness.
_SERVE_STREAM = 7919


@dataclass(frozen=True)
class LatentItem:
    """Ground truth the allocator must not see."""

    id: str
    quality: float
    true_threshold: float  # impressions; 0 = inherently discoverable, inf = never
    engagement_prob: float


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    items_per_round: int = 1000
    rounds: int = 3
    feature_dim: int = 8
    feature_noise: float = 0.5
    threshold_mu: float = 6.0
    threshold_kappa: float = 1.5
    threshold_noise: float = 0.5
    max_threshold: int = 16_000
    # fractions of (inherently discoverable, finite threshold, never discoverable)
    archetype_mix: tuple[float, float, float] = (0.05, 0.80, 0.15)
    engagement_a: float = 1.0
    engagement_b: float = -2.2

    def validate(self) -> "SimConfig":
        if self.items_per_round <= 0:
            raise ConfigError("items_per_round must be positive")
        if self.rounds < 1:
            raise ConfigError("rounds must be at least 1")
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        if self.feature_noise < 0 or self.threshold_noise < 0:
            raise ConfigError("noise scales must be non-negative")
        if self.max_threshold < 1:
            raise ConfigError("max_threshold must be at least 1")
        if len(self.archetype_mix) != 3 or any(f < 0 for f in self.archetype_mix):
            raise ConfigError("archetype_mix must be three non-negative fractions")
        if not math.isclose(sum(self.archetype_mix), 1.0, abs_tol=1e-9):
            raise ConfigError("archetype_mix must sum to 1")
        return self


@dataclass(frozen=True)
class Observation:
    """Outcome of serving one item in one round."""

    round: int
    item_id: str
    served: int
    positive_events: int
    discovered: bool


def _feature_projection(config: SimConfig) -> np.ndarray:
    # Fixed per seed, shared by every round, so features mean the same thing
    # across the item pool.
    rng = np.random.default_rng([config.seed, 0xFEA7])
    return rng.normal(0.0, 1.0, size=config.feature_dim)


def generate_corpus(
    config: SimConfig, round_index: int
) -> tuple[list[LatentItem], list[ItemRecord]]:
    """Draw one round's fresh items. Deterministic given (seed, round_index)."""
    config.validate()
    if round_index < 0:
        raise DataError("round_index must be non-negative")
    projection = _feature_projection(config)
    rng = np.random.default_rng([config.seed, round_index])
    n = config.items_per_round
    quality = rng.normal(0.0, 1.0, size=n)
    archetype = rng.choice(3, size=n, p=list(config.archetype_mix))
    log_noise = rng.normal(0.0, config.threshold_noise, size=n)
    feature_noise = rng.normal(0.0, 1.0, size=(n, config.feature_dim))

    latents = []
    records = []
    for i in range(n):
        item_id = f"r{round_index:02d}-{i:05d}"
        q = float(quality[i])
        if archetype[i] == 0:
            theta = 0.0
        elif archetype[i] == 2:
            theta = math.inf
        else:
            raw = math.exp(
                config.threshold_mu - config.threshold_kappa * q + float(log_noise[i])
            )
            theta = float(min(max(round(raw), 1), config.max_threshold))
        engagement_prob = 1.0 / (
            1.0 + math.exp(-(config.engagement_a * q + config.engagement_b))
        )
        latents.append(
            LatentItem(
                id=item_id,
                quality=q,
                true_threshold=theta,
                engagement_prob=engagement_prob,
            )
        )
        features = projection * q + config.feature_noise * feature_noise[i]
        records.append(ItemRecord(id=item_id, features=features))
    return latents, records


def serve_round(
    latents: Sequence[LatentItem],
    plan: AllocationPlan,
    config: SimConfig,
    round_index: int = 0,
) -> list[Observation]:
    """Serve granted impressions and report engagement plus the discovery outcome.

    Only funded entries produce observations: an item nobody explored yields
    no label. Positive events are Binomial(granted, engagement_prob); the item
    is discovered exactly when the traffic it received reaches its threshold.
    """
    by_id = {lat.id: lat for lat in latents}
    rng = np.random.default_rng([config.seed, round_index, _SERVE_STREAM])
    observations = []
    for entry in sorted(plan.entries, key=lambda e: e.item_id):
        if entry.item_id not in by_id:
            raise DataError(f"plan references unknown item {entry.item_id}")
        if entry.granted == 0:
            continue
        lat = by_id[entry.item_id]
        positives = int(rng.binomial(entry.granted, lat.engagement_prob))
        observations.append(
            Observation(
                round=round_index,
                item_id=entry.item_id,
                served=entry.granted,
                positive_events=positives,
                discovered=entry.granted >= lat.true_threshold,
            )
        )
    return observations


def build_training_set(
    observations: Sequence[Observation],
    records: Sequence[ItemRecord],
    schema: BucketSchema,
) -> list[TrainingExample]:
    """One example per serving event.

    Features are the item's static features plus its engagement block as it
    stood when the round was served, reconstructed by replaying observations
    in round order. The bucket is the served traffic's bucket and the label is
    the observed discovery outcome.
    """
    static = {rec.id: rec.features for rec in records}
    running: dict[str, tuple[int, int]] = {}
    examples = []
    for obs in sorted(observations, key=lambda o: (o.round, o.item_id)):
        if obs.item_id not in static:
            raise DataError(f"observation references unknown item {obs.item_id}")
        if obs.discovered is None:
            raise DataError(f"unresolved observation for item {obs.item_id}")
        impressions, positives = running.get(obs.item_id, (0, 0))
        stats = EngagementStats(impressions=impressions, positive_events=positives)
        features = np.concatenate([static[obs.item_id], engagement_features(stats)])
        examples.append(
            TrainingExample(
                features=features,
                bucket=bucket_of(obs.served, schema),
                label=int(obs.discovered),
            )
        )
        running[obs.item_id] = (
            impressions + obs.served,
            positives + obs.positive_events,
        )
    return examples


@dataclass(frozen=True)
class RoundMetrics:
    round: int
    candidates: int
    funded: int
    discovered: int
    total_allocated: int
    total_cost: float
    region_counts: dict[str, int]


@dataclass(frozen=True)
class ItemRoundRow:
    round: int
    item_id: str
    region: str
    granted: int
    positive_events: int
    discovered: bool


@dataclass(frozen=True)
class ExperimentReport:
    strategy: str
    seed: int
    rounds: tuple[RoundMetrics, ...]
    total_discovered: int
    item_rows: tuple[ItemRoundRow, ...]


def run_experiment(
    sim_config: SimConfig,
    alloc_config: AllocationConfig,
    schema: BucketSchema,
    params: Hyperparams = Hyperparams(),
    strategy: str = "model",
) -> ExperimentReport:
    """Run the multi-round exploration loop under one strategy.

    Round 0 always explores uniformly because no labels exist yet. From round
    1 on, the "model" strategy retrains on every accumulated outcome and
    allocates through the three-region allocator; "uniform" keeps the
    baseline; "oracle" allocates from the hidden thresholds. Discovered items
    leave the candidate pool; every round adds a fresh batch.
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    sim_config.validate()
    validate_config(alloc_config, schema)

    pool_latents: dict[str, LatentItem] = {}
    pool_records: dict[str, ItemRecord] = {}
    all_observations: list[Observation] = []
    round_metrics = []
    item_rows = []

    for round_index in range(sim_config.rounds):
        latents, records = generate_corpus(sim_config, round_index)
        for lat, rec in zip(latents, records):
            pool_latents[lat.id] = lat
            pool_records[rec.id] = rec

        candidates = [
            rec for rec in pool_records.values() if rec.discovered is not True
        ]
        candidates.sort(key=lambda r: r.id)

        if strategy == "oracle":
            plan = oracle_allocate(
                [pool_latents[rec.id] for rec in candidates], alloc_config
            )
        elif strategy == "model" and round_index > 0:
            examples = build_training_set(
                all_observations, list(pool_records.values()), schema
            )
            model = train(examples, schema, params)
            plan = allocate(candidates, model, alloc_config, schema)
        else:
            plan = uniform_allocate(candidates, alloc_config)

        observations = serve_round(
            [pool_latents[rec.id] for rec in candidates],
            plan,
            sim_config,
            round_index,
        )
        all_observations.extend(observations)

        regions = {e.item_id: e.region.value for e in plan.entries}
        for obs in observations:
            rec = pool_records[obs.item_id]
            stats = rec.engagement
            pool_records[obs.item_id] = replace(
                rec,
                engagement=EngagementStats(
                    impressions=stats.impressions + obs.served,
                    positive_events=stats.positive_events + obs.positive_events,
                ),
                impressions_received=rec.impressions_received + obs.served,
                discovered=True if obs.discovered else rec.discovered,
            )
            item_rows.append(
                ItemRoundRow(
                    round=round_index,
                    item_id=obs.item_id,
                    region=regions[obs.item_id],
                    granted=obs.served,
                    positive_events=obs.positive_events,
                    discovered=obs.discovered,
                )
            )

        counts: dict[str, int] = {}
        for entry in plan.entries:
            counts[entry.region.value] = counts.get(entry.region.value, 0) + 1
        round_metrics.append(
            RoundMetrics(
                round=round_index,
                candidates=len(candidates),
                funded=sum(1 for e in plan.entries if e.granted > 0),
                discovered=sum(1 for o in observations if o.discovered),
                total_allocated=plan.total_allocated,
                total_cost=plan.total_cost,
                region_counts=dict(sorted(counts.items())),
            )
        )

    return ExperimentReport(
        strategy=strategy,
        seed=sim_config.seed,
        rounds=tuple(round_metrics),
        total_discovered=sum(m.discovered for m in round_metrics),
        item_rows=tuple(item_rows),
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def save_latents(latents: Sequence[LatentItem], path: str | Path) -> None:
    """Ground-truth file; kept separate so allocation code never reads it."""
    with open(path, "w", encoding="utf-8") as fh:
        for lat in latents:
            fh.write(
                json.dumps(
                    {
                        "id": lat.id,
                        "quality": lat.quality,
                        "threshold": (
                            None if math.isinf(lat.true_threshold) else lat.true_threshold
                        ),
                        "engagement_prob": lat.engagement_prob,
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


def load_latents(path: str | Path) -> list[LatentItem]:
    latents = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                threshold = row["threshold"]
                latents.append(
                    LatentItem(
                        id=str(row["id"]),
                        quality=float(row["quality"]),
                        true_threshold=(
                            math.inf if threshold is None else float(threshold)
                        ),
                        engagement_prob=float(row["engagement_prob"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad latent record: {exc}") from exc
    return latents


def report_to_dict(report: ExperimentReport) -> dict:
    return {
        "strategy": report.strategy,
        "seed": report.seed,
        "total_discovered": report.total_discovered,
        "rounds": [
            {
                "round": m.round,
                "candidates": m.candidates,
                "funded": m.funded,
                "discovered": m.discovered,
                "total_allocated": m.total_allocated,
                "total_cost": m.total_cost,
                "region_counts": m.region_counts,
            }
            for m in report.rounds
        ],
    }


def write_report_json(report: ExperimentReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report_to_dict(report), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def write_report_csv(report: ExperimentReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["round", "item_id", "region", "granted", "positive_events", "discovered"]
        )
        for row in report.item_rows:
            writer.writerow(
                [
                    row.round,
                    row.item_id,
                    row.region,
                    row.granted,
                    row.positive_events,
                    int(row.discovered),
                ]
            )
