"""Three-region exploration traffic allocation.

Items are partitioned by their predicted discoverability at the traffic cap:
confident items get the cheapest qualifying traffic level, moderate ones get
the full cap, and long-shot items share a reserved slice of budget in
proportion to their user feedback. Funding is full-or-nothing, cheapest first,
so the count of funded items is maximized within the budget.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import (
    AllocationConfig,
    AllocationPlan,
    BucketSchema,
    ConfigError,
    DataError,
    EngagementStats,
    ItemRecord,
    PlanEntry,
    Region,
    cost_of,
    item_feature_vector,
)
from .model import DiscoverabilityModel, invert_cap, monotone_curve, predict_curve


@dataclass(frozen=True)
class GrowthStats:
    """Period-over-period growth ratios of the item pool and of exploration traffic."""

    item_growth: float
    traffic_growth: float

    def __post_init__(self) -> None:
        if self.item_growth <= 0 or self.traffic_growth <= 0:
            raise ConfigError("growth ratios must be positive")


@dataclass(frozen=True)
class RegionAssignment:
    item_id: str
    region: Region
    p_at_maxcap: float
    requested: int | None = None


def classify_region(
    curve: np.ndarray, config: AllocationConfig
) -> tuple[Region, float]:
    """Region from the curve value at the top bucket (discoverability at MaxCap).

    Boundary convention: p == cf_high falls into Moderate, matching the
    moderate region's closed lower bound at cf_low.
    """
    p = float(curve[-1])
    if p > config.cf_high:
        return Region.HIGH, p
    if p < config.cf_low:
        return Region.LOW, p
    return Region.MODERATE, p


def requested_traffic(
    assignment: RegionAssignment,
    curve: np.ndarray,
    config: AllocationConfig,
    schema: BucketSchema,
) -> int:
    """Traffic an item asks for before budget arbitration.

    High items invert their curve at cf_high; moderate items request the full
    cap. Low items are funded collectively by allocate_low, never here.
    """
    if assignment.region is Region.HIGH:
        cap = invert_cap(curve, config.cf_high, config, schema)
        if cap is None:
            # Unreachable for a monotone curve: High means curve[-1] > cf_high.
            raise DataError(f"High item {assignment.item_id} has no qualifying bucket")
        return cap
    if assignment.region is Region.MODERATE:
        return config.max_cap
    raise DataError("requested_traffic is undefined for the Low region")


def _water_fill(weights: Sequence[float], budget: int, cap: int) -> list[float]:
    """Proportional split under a per-item cap, redistributing capped overflow."""
    grants = [0.0] * len(weights)
    active = list(range(len(weights)))
    remaining = float(budget)
    while active and remaining > 0:
        total_weight = sum(weights[i] for i in active)
        if total_weight <= 0:
            break
        over = [i for i in active if remaining * weights[i] / total_weight >= cap]
        if not over:
            for i in active:
                grants[i] = remaining * weights[i] / total_weight
            break
        for i in over:
            grants[i] = float(cap)
            remaining -= cap
        over_set = set(over)
        active = [i for i in active if i not in over_set]
    return grants


def allocate_low(
    items: Sequence[tuple[str, EngagementStats]],
    low_budget: int,
    config: AllocationConfig,
    feedback: Callable[[EngagementStats], float] | None = None,
) -> list[tuple[str, int]]:
    """Split the low-region budget across items in proportion to their feedback.

    The feedback signal defaults to the positive-event rate but is pluggable.
    Items with no feedback yet get a small floor weight (1/n) so new items are
    not starved. Shares are capped at max_cap with overflow redistributed; a
    share that lands below min_cap is deferred to a later round (granted 0)
    rather than served under the floor.
    """
    if low_budget < 0:
        raise DataError("low-region budget must be non-negative")
    if not items:
        return []
    if feedback is None:
        feedback = lambda stats: stats.positive_rate
    floor_weight = 1.0 / len(items)
    raw = [feedback(stats) for _, stats in items]
    if any(value < 0 for value in raw):
        raise DataError("feedback values must be non-negative")
    weights = [value if value > 0 else floor_weight for value in raw]
    shares = _water_fill(weights, low_budget, config.max_cap)
    grants = []
    for (item_id, _), share in zip(items, shares):
        # Snap shares sitting a float ulp below an integer before flooring.
        granted = int(math.floor(share + 1e-9))
        if granted < config.min_cap:
            granted = 0
        grants.append((item_id, granted))
    return grants


def adapt_low_fraction(
    current: float,
    growth: GrowthStats,
    bounds: tuple[float, float] = (0.0, 1.0),
) -> float:
    """Scale the low-region budget share by traffic growth relative to item growth.

    Faster item growth than traffic growth shrinks the share, and vice versa;
    the result is clamped into bounds.
    """
    lo, hi = bounds
    if not 0.0 <= lo <= hi <= 1.0:
        raise ConfigError("bounds must satisfy 0 <= lo <= hi <= 1")
    if not 0.0 <= current <= 1.0:
        raise ConfigError("current fraction must lie in [0, 1]")
    return min(max(current * growth.traffic_growth / growth.item_growth, lo), hi)


def _repair_cost(
    granted: dict[str, int],
    assignments: dict[str, RegionAssignment],
    low_rates: dict[str, float],
    config: AllocationConfig,
) -> None:
    """Drop funded items in place until the cost constraint holds.

    Drop order reflects expected gain per impression: Low items first (worst
    feedback first), then Moderate by descending request, then High by
    descending request as a last resort so the constraint always holds.
    """
    total_cost = sum(cost_of(g, config) for g in granted.values())
    if total_cost <= config.max_cost:
        return

    def funded(region: Region) -> list[str]:
        return [
            i
            for i, g in granted.items()
            if g > 0 and assignments[i].region is region
        ]

    drop_order = (
        sorted(funded(Region.LOW), key=lambda i: (low_rates[i], i))
        + sorted(funded(Region.MODERATE), key=lambda i: (-granted[i], i))
        + sorted(funded(Region.HIGH), key=lambda i: (-granted[i], i))
    )
    for item_id in drop_order:
        if total_cost <= config.max_cost:
            break
        total_cost -= cost_of(granted[item_id], config)
        granted[item_id] = 0


def allocate(
    corpus: Sequence[ItemRecord],
    model: DiscoverabilityModel,
    config: AllocationConfig,
    schema: BucketSchema,
    growth: GrowthStats | None = None,
) -> AllocationPlan:
    """Build a full allocation plan for a corpus.

    The budget is split between a High+Moderate pool and a Low pool. High and
    Moderate items are funded full-or-nothing in ascending order of requested
    traffic; whatever the pool does not spend spills into the Low pool, which
    is then divided by allocate_low. Finally the cost constraint is enforced
    by dropping items (see _repair_cost). Deterministic: ties break on item id.
    """
    if model.schema != schema:
        raise ConfigError("model was trained against a different bucket schema")
    records = sorted(corpus, key=lambda r: r.id)
    if len({r.id for r in records}) != len(records):
        raise DataError("duplicate item ids in corpus")

    assignments: dict[str, RegionAssignment] = {}
    requested: dict[str, int] = {}
    low_rates: dict[str, float] = {}
    low_items: list[tuple[str, EngagementStats]] = []
    for rec in records:
        curve = monotone_curve(predict_curve(model, item_feature_vector(rec)))
        region, p = classify_region(curve, config)
        assignment = RegionAssignment(item_id=rec.id, region=region, p_at_maxcap=p)
        if region is Region.LOW:
            low_items.append((rec.id, rec.engagement))
            low_rates[rec.id] = rec.engagement.positive_rate
        else:
            req = requested_traffic(assignment, curve, config, schema)
            assignment = replace(assignment, requested=req)
            requested[rec.id] = req
        assignments[rec.id] = assignment

    low_pool = round(config.low_region_fraction * config.total_budget)
    if growth is not None:
        adapted = adapt_low_fraction(config.low_region_fraction, growth)
        low_pool = round(adapted * config.total_budget)
    hm_budget = config.total_budget - low_pool

    granted: dict[str, int] = {rec.id: 0 for rec in records}
    remaining = hm_budget
    for item_id in sorted(requested, key=lambda i: (requested[i], i)):
        if requested[item_id] > remaining:
            break
        granted[item_id] = requested[item_id]
        remaining -= requested[item_id]

    # Unspent High/Moderate budget spills into the Low pool.
    for item_id, grant in allocate_low(low_items, low_pool + remaining, config):
        granted[item_id] = grant

    _repair_cost(granted, assignments, low_rates, config)

    entries = []
    for rec in records:
        assignment = assignments[rec.id]
        grant = granted[rec.id]
        entries.append(
            PlanEntry(
                item_id=rec.id,
                region=assignment.region if grant > 0 else Region.UNFUNDED,
                granted=grant,
                requested=assignment.requested,
                p_at_maxcap=assignment.p_at_maxcap,
            )
        )
    total = sum(e.granted for e in entries)
    total_cost = sum(cost_of(e.granted, config) for e in entries)
    return AllocationPlan(
        entries=tuple(entries), total_allocated=total, total_cost=total_cost
    )


# ---------------------------------------------------------------------------
# Plan export
# ---------------------------------------------------------------------------

def write_plan_csv(plan: AllocationPlan, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "region", "granted", "requested", "p_at_maxcap"])
        for e in plan.entries:
            writer.writerow(
                [
                    e.item_id,
                    e.region.value,
                    e.granted,
                    "" if e.requested is None else e.requested,
                    "" if e.p_at_maxcap is None else repr(e.p_at_maxcap),
                ]
            )


def plan_summary(
    plan: AllocationPlan,
    config: AllocationConfig,
    adapted_low_fraction: float | None = None,
) -> dict:
    regions = Counter(e.region.value for e in plan.entries)
    summary = {
        "items": len(plan.entries),
        "region_counts": dict(sorted(regions.items())),
        "total_allocated": plan.total_allocated,
        "total_cost": plan.total_cost,
        "budget": config.total_budget,
        "budget_utilization": (
            plan.total_allocated / config.total_budget if config.total_budget else 0.0
        ),
        "cost_utilization": plan.total_cost / config.max_cost,
    }
    if adapted_low_fraction is not None:
        summary["adapted_low_fraction"] = adapted_low_fraction
    return summary


def write_plan_summary(
    plan: AllocationPlan,
    config: AllocationConfig,
    path: str | Path,
    adapted_low_fraction: float | None = None,
) -> None:
    summary = plan_summary(plan, config, adapted_low_fraction)
    Path(path).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
