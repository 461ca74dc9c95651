"""Shared domain types: items, engagement, traffic buckets, allocation config and plans.

Everything here is an immutable value object; the simulator updates items by
copy-and-replace only.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import numpy as np


class ConfigError(ValueError):
    """A configuration or schema invariant is violated."""


class DataError(ValueError):
    """Input data is malformed or inconsistent."""


#: Engagement-derived feature block appended to static item features:
#: [positive_rate, log1p(impressions)].
ENGAGEMENT_FEATURE_COUNT = 2


class Region(str, Enum):
    """Funding outcome of a plan entry.

    High/Moderate/Low are the three discoverability regions. Unfunded marks
    items granted zero traffic. Uniform and Oracle label funded entries of the
    baseline strategies, which do not classify items into regions.
    """

    HIGH = "High"
    MODERATE = "Moderate"
    LOW = "Low"
    UNFUNDED = "Unfunded"
    UNIFORM = "Uniform"
    ORACLE = "Oracle"


@dataclass(frozen=True)
class EngagementStats:
    """Running engagement counters for one item."""

    impressions: int = 0
    positive_events: int = 0

    def __post_init__(self) -> None:
        if self.impressions < 0 or self.positive_events < 0:
            raise DataError("engagement counts must be non-negative")
        if self.positive_events > self.impressions:
            raise DataError("positive_events cannot exceed impressions")

    @property
    def positive_rate(self) -> float:
        if self.impressions == 0:
            return 0.0
        return self.positive_events / self.impressions


@dataclass(frozen=True, eq=False)
class ItemRecord:
    """An item as the allocator sees it: static features plus observed engagement."""

    id: str
    features: np.ndarray
    engagement: EngagementStats = EngagementStats()
    impressions_received: int = 0
    discovered: bool | None = None

    def __post_init__(self) -> None:
        feats = np.asarray(self.features, dtype=float)
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        if self.impressions_received < 0:
            raise DataError("impressions_received must be non-negative")


@dataclass(frozen=True)
class BucketSchema:
    """Discretization of exploration traffic into ordered buckets.

    Bucket k covers [edges[k], edges[k+1]); the last bucket is open-ended.
    `representative[k]` is the scalar traffic used when a bucket index must be
    mapped back to impressions.
    """

    edges: tuple[int, ...]
    representative: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", tuple(int(e) for e in self.edges))
        object.__setattr__(
            self, "representative", tuple(int(r) for r in self.representative)
        )

    @property
    def n_buckets(self) -> int:
        return len(self.edges)


def geometric_schema(
    max_cap: int = 1600, first_edge: int = 100, n_buckets: int = 6
) -> BucketSchema:
    """Default schema with doubling edges, e.g. 0, 100, 200, 400, 800, 1600.

    Interior representatives sit at the top of their bucket (one impression
    below the next edge) so that `bucket_of(representative[k]) == k`; the top
    bucket's representative is `max_cap`.
    """
    edges = [0] + [first_edge * 2**k for k in range(n_buckets - 1)]
    reps = [edges[k + 1] - 1 for k in range(n_buckets - 1)] + [max_cap]
    return BucketSchema(edges=tuple(edges), representative=tuple(reps))


@dataclass(frozen=True)
class AllocationConfig:
    """Budget, caps, confidence thresholds and cost model for one allocation round."""

    total_budget: int
    max_cost: float
    min_cap: int
    max_cap: int
    cf_high: float
    cf_low: float
    low_region_fraction: float
    unit_cost: float = 0.01
    #: Optional pluggable cost model; must be non-decreasing with cost_fn(0) == 0.
    #: When unset, cost is linear: unit_cost * traffic.
    cost_fn: Callable[[int], float] | None = None


DEFAULT_SCHEMA = geometric_schema()

DEFAULT_ALLOCATION = AllocationConfig(
    total_budget=200_000,
    max_cost=2500.0,
    min_cap=100,
    max_cap=1600,
    cf_high=0.6,
    cf_low=0.2,
    low_region_fraction=0.1,
    unit_cost=0.01,
)


@dataclass(frozen=True)
class PlanEntry:
    item_id: str
    region: Region
    granted: int
    requested: int | None = None
    p_at_maxcap: float | None = None


@dataclass(frozen=True)
class AllocationPlan:
    """Per-item grants plus budget and cost accounting."""

    entries: tuple[PlanEntry, ...]
    total_allocated: int
    total_cost: float


def bucket_of(traffic: int, schema: BucketSchema) -> int:
    """Bucket index for a traffic level; beyond the last edge clamps to the last bucket."""
    if traffic < 0:
        raise DataError("traffic must be non-negative")
    idx = bisect.bisect_right(schema.edges, traffic) - 1
    return min(idx, schema.n_buckets - 1)


def cost_of(traffic: int, config: AllocationConfig) -> float:
    """Exploration cost of a traffic level under the config's cost model."""
    if traffic < 0:
        raise DataError("traffic must be non-negative")
    if config.cost_fn is not None:
        return float(config.cost_fn(traffic))
    return config.unit_cost * traffic


def validate_config(config: AllocationConfig, schema: BucketSchema) -> AllocationConfig:
    """Check every config and schema invariant; raise ConfigError naming the first violation."""
    if schema.n_buckets < 3:
        raise ConfigError("bucket count must be at least 3")
    if len(schema.representative) != schema.n_buckets:
        raise ConfigError("representative count must match bucket count")
    if schema.edges[0] != 0:
        raise ConfigError("first bucket edge must be 0")
    for lo, hi in zip(schema.edges, schema.edges[1:]):
        if hi <= lo:
            raise ConfigError("bucket edges must be strictly increasing")
    for k in range(schema.n_buckets - 1):
        rep = schema.representative[k]
        if not schema.edges[k] <= rep < schema.edges[k + 1]:
            raise ConfigError(f"representative of bucket {k} lies outside the bucket")
    if schema.representative[-1] < schema.edges[-1]:
        raise ConfigError("top bucket representative below its lower edge")

    if not (0.0 < config.cf_low < config.cf_high < 1.0):
        raise ConfigError("cf ordering: require 0 < cf_low < cf_high < 1")
    if config.min_cap <= 0:
        raise ConfigError("MinCap must be positive")
    if config.max_cap < config.min_cap:
        raise ConfigError("MaxCap must be at least MinCap")
    if config.max_cap != schema.representative[-1]:
        raise ConfigError("MaxCap mismatch with top bucket representative")
    # total_budget 0 is allowed as a degenerate dry run yielding an empty plan.
    if config.total_budget < 0:
        raise ConfigError("total budget must be non-negative")
    if config.max_cost <= 0:
        raise ConfigError("max cost must be positive")
    if not 0.0 <= config.low_region_fraction <= 1.0:
        raise ConfigError("low region fraction must lie in [0, 1]")
    if config.unit_cost < 0:
        raise ConfigError("unit cost must be non-negative")
    if config.cost_fn is not None and config.cost_fn(0) != 0:
        raise ConfigError("cost function must be zero at zero traffic")
    return config


def verify_plan(plan: AllocationPlan, config: AllocationConfig) -> None:
    """Re-check all plan invariants from the plan and config alone.

    Raises DataError on the first violation. Used by tests and by callers that
    receive plans across a trust boundary.
    """
    allocated = 0
    cost = 0.0
    for entry in plan.entries:
        if entry.granted == 0:
            if entry.region is not Region.UNFUNDED:
                raise DataError(f"zero grant must be Unfunded: {entry.item_id}")
        else:
            if entry.region is Region.UNFUNDED:
                raise DataError(f"Unfunded entry with traffic: {entry.item_id}")
            if not config.min_cap <= entry.granted <= config.max_cap:
                raise DataError(
                    f"grant outside [MinCap, MaxCap]: {entry.item_id} -> {entry.granted}"
                )
        allocated += entry.granted
        cost += cost_of(entry.granted, config)
    if allocated != plan.total_allocated:
        raise DataError("total_allocated does not match entries")
    if not math.isclose(cost, plan.total_cost, rel_tol=1e-9, abs_tol=1e-9):
        raise DataError("total_cost does not match entries")
    if allocated > config.total_budget:
        raise DataError("plan exceeds traffic budget")
    if cost > config.max_cost + 1e-9:
        raise DataError("plan exceeds cost budget")


def engagement_features(stats: EngagementStats) -> np.ndarray:
    return np.array([stats.positive_rate, math.log1p(stats.impressions)])


def item_feature_vector(record: ItemRecord) -> np.ndarray:
    """Model input for one item: static features followed by the engagement block."""
    return np.concatenate([record.features, engagement_features(record.engagement)])


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def save_corpus(records: Iterable[ItemRecord], path: str | Path) -> None:
    """Write items as JSON lines: id, features, impressions, positive_events."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "features": [float(v) for v in rec.features],
                        "impressions": rec.engagement.impressions,
                        "positive_events": rec.engagement.positive_events,
                    },
                    sort_keys=True,
                )
            )
            fh.write("\n")


def load_corpus(path: str | Path) -> list[ItemRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                stats = EngagementStats(
                    impressions=int(row["impressions"]),
                    positive_events=int(row["positive_events"]),
                )
                records.append(
                    ItemRecord(
                        id=str(row["id"]),
                        features=np.asarray(row["features"], dtype=float),
                        engagement=stats,
                        impressions_received=int(row["impressions"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad corpus record: {exc}") from exc
    return records


def config_to_dict(config: AllocationConfig, schema: BucketSchema) -> dict:
    """Flat key-value snapshot of a config plus its schema."""
    return {
        "total_budget": config.total_budget,
        "max_cost": config.max_cost,
        "unit_cost": config.unit_cost,
        "min_cap": config.min_cap,
        "max_cap": config.max_cap,
        "cf_high": config.cf_high,
        "cf_low": config.cf_low,
        "low_region_fraction": config.low_region_fraction,
        "bucket_edges": list(schema.edges),
        "bucket_representatives": list(schema.representative),
    }


def config_from_dict(raw: dict) -> tuple[AllocationConfig, BucketSchema]:
    """Build (config, schema) from a flat dict; missing keys fall back to defaults."""
    base = config_to_dict(DEFAULT_ALLOCATION, DEFAULT_SCHEMA)
    unknown = set(raw) - set(base)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base.update(raw)
    edges = tuple(int(e) for e in base["bucket_edges"])
    reps = base["bucket_representatives"]
    if "bucket_edges" in raw and "bucket_representatives" not in raw:
        # Edges changed without explicit representatives: re-derive them.
        reps = [edges[k + 1] - 1 for k in range(len(edges) - 1)] + [int(base["max_cap"])]
    schema = BucketSchema(edges=edges, representative=tuple(int(r) for r in reps))
    config = AllocationConfig(
        total_budget=int(base["total_budget"]),
        max_cost=float(base["max_cost"]),
        min_cap=int(base["min_cap"]),
        max_cap=int(base["max_cap"]),
        cf_high=float(base["cf_high"]),
        cf_low=float(base["cf_low"]),
        low_region_fraction=float(base["low_region_fraction"]),
        unit_cost=float(base["unit_cost"]),
    )
    return config, schema
