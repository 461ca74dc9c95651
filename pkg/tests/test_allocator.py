import math

import numpy as np
import pytest

from coldstart_explore.allocator import (
    GrowthStats,
    RegionAssignment,
    adapt_low_fraction,
    allocate,
    allocate_low,
    classify_region,
    requested_traffic,
)
from coldstart_explore.core import (
    AllocationConfig,
    BucketSchema,
    ConfigError,
    DataError,
    EngagementStats,
    ItemRecord,
    Region,
    geometric_schema,
    verify_plan,
)
from conftest import make_model, make_record

SCHEMA = geometric_schema()
SCHEMA3 = BucketSchema(edges=(0, 150, 450), representative=(100, 400, 1600))


def cfg(**overrides) -> AllocationConfig:
    base = dict(
        total_budget=10_000,
        max_cost=10_000.0,
        min_cap=100,
        max_cap=1600,
        cf_high=0.9,
        cf_low=0.2,
        low_region_fraction=0.0,
    )
    base.update(overrides)
    return AllocationConfig(**base)


class TestClassifyRegion:
    def test_high(self):
        region, p = classify_region(np.array([0.5, 0.8, 0.97]), cfg())
        assert region is Region.HIGH and p == pytest.approx(0.97)

    def test_moderate(self):
        region, _ = classify_region(np.array([0.2, 0.3, 0.5]), cfg())
        assert region is Region.MODERATE

    def test_low(self):
        region, _ = classify_region(np.array([0.05, 0.08, 0.1]), cfg())
        assert region is Region.LOW

    def test_boundaries_fall_into_moderate(self):
        assert classify_region(np.array([0.1, 0.5, 0.9]), cfg())[0] is Region.MODERATE
        assert classify_region(np.array([0.1, 0.15, 0.2]), cfg())[0] is Region.MODERATE

    def test_partition_is_exhaustive_and_exclusive(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            curve = np.sort(rng.uniform(0, 1, size=4))
            region, p = classify_region(curve, cfg())
            expected = (
                Region.HIGH
                if p > 0.9
                else Region.LOW
                if p < 0.2
                else Region.MODERATE
            )
            assert region is expected


class TestRequestedTraffic:
    def test_high_inverts_curve(self):
        assignment = RegionAssignment("a", Region.HIGH, 0.97)
        req = requested_traffic(
            assignment, np.array([0.5, 0.92, 0.97]), cfg(), SCHEMA3
        )
        assert req == 400

    def test_moderate_requests_max_cap(self):
        assignment = RegionAssignment("a", Region.MODERATE, 0.5)
        req = requested_traffic(assignment, np.array([0.2, 0.3, 0.5]), cfg(), SCHEMA3)
        assert req == 1600

    def test_high_with_saturated_curve_requests_min_cap(self):
        assignment = RegionAssignment("a", Region.HIGH, 1.0)
        req = requested_traffic(assignment, np.ones(3), cfg(), SCHEMA3)
        assert req == 100

    def test_low_region_rejected(self):
        assignment = RegionAssignment("a", Region.LOW, 0.1)
        with pytest.raises(DataError, match="Low"):
            requested_traffic(assignment, np.full(3, 0.1), cfg(), SCHEMA3)


def water_fill_reference(weights, budget, cap):
    """Closed-form water level: grant_i = min(cap, level * w_i).

    Scans saturation points instead of iterating, so it is an independent
    derivation of the same fixed point.
    """
    n = len(weights)
    if cap * n <= budget:
        return [float(cap)] * n
    order = sorted(range(n), key=lambda i: -weights[i])  # saturate biggest first
    saturated = []
    for m in range(n + 1):
        rest = order[m:]
        rest_weight = sum(weights[i] for i in rest)
        spent = cap * m
        if rest_weight == 0:
            level = math.inf if spent < budget else 0.0
        else:
            level = (budget - spent) / rest_weight
        # valid iff saturated items would overflow at this level and rest would not
        ok_sat = all(level * weights[i] >= cap - 1e-12 for i in order[:m])
        ok_rest = all(level * weights[i] <= cap + 1e-12 for i in rest)
        if ok_sat and ok_rest and spent <= budget:
            grants = [0.0] * n
            for i in order[:m]:
                grants[i] = float(cap)
            for i in rest:
                grants[i] = level * weights[i]
            return grants
    raise AssertionError("no consistent water level found")


class TestAllocateLow:
    def test_proportional_no_caps(self):
        items = [
            ("a", EngagementStats(100, 20)),
            ("b", EngagementStats(100, 10)),
            ("c", EngagementStats(100, 10)),
        ]
        grants = allocate_low(items, 400, cfg(max_cap=300, min_cap=50))
        assert grants == [("a", 200), ("b", 100), ("c", 100)]

    def test_cap_overflow_redistributed(self):
        items = [("a", EngagementStats(100, 90)), ("b", EngagementStats(100, 10))]
        grants = allocate_low(items, 1000, cfg(max_cap=600, min_cap=50))
        assert grants == [("a", 600), ("b", 400)]

    def test_zero_feedback_items_share_equally(self):
        items = [("a", EngagementStats()), ("b", EngagementStats())]
        grants = allocate_low(items, 500, cfg(max_cap=1600, min_cap=100))
        assert grants == [("a", 250), ("b", 250)]

    def test_sub_min_cap_shares_deferred(self):
        items = [(f"i{k}", EngagementStats()) for k in range(10)]
        grants = allocate_low(items, 500, cfg(max_cap=1600, min_cap=100))
        assert all(g == 0 for _, g in grants)

    def test_empty_items(self):
        assert allocate_low([], 100, cfg()) == []

    def test_matches_reference_water_filling(self):
        rng = np.random.default_rng(11)
        config = cfg(max_cap=600, min_cap=50)
        for _ in range(100):
            n = int(rng.integers(1, 8))
            items = []
            for k in range(n):
                imp = int(rng.integers(0, 200))
                pos = int(rng.integers(0, imp + 1))
                items.append((f"i{k}", EngagementStats(imp, pos)))
            budget = int(rng.integers(0, 3000))
            got = dict(allocate_low(items, budget, config))
            weights = [
                s.positive_rate if s.positive_rate > 0 else 1.0 / n for _, s in items
            ]
            expected = {}
            for (item_id, _), share in zip(
                items, water_fill_reference(weights, budget, 600)
            ):
                g = int(math.floor(share + 1e-9))
                expected[item_id] = g if g >= 50 else 0
            assert got == expected

    def test_custom_feedback_signal(self):
        items = [
            ("a", EngagementStats(100, 20)),
            ("b", EngagementStats(10, 2)),
        ]
        # raw positive counts instead of rates: 20 vs 2
        grants = allocate_low(
            items,
            1100,
            cfg(max_cap=1600, min_cap=50),
            feedback=lambda stats: float(stats.positive_events),
        )
        assert grants == [("a", 1000), ("b", 100)]

    def test_negative_feedback_rejected(self):
        items = [("a", EngagementStats(10, 1))]
        with pytest.raises(DataError, match="non-negative"):
            allocate_low(items, 100, cfg(), feedback=lambda stats: -1.0)

    def test_grants_never_exceed_budget(self):
        rng = np.random.default_rng(3)
        config = cfg(max_cap=400, min_cap=20)
        for _ in range(200):
            n = int(rng.integers(1, 12))
            items = [
                (f"i{k}", EngagementStats(100, int(rng.integers(0, 101))))
                for k in range(n)
            ]
            budget = int(rng.integers(0, 2500))
            grants = allocate_low(items, budget, config)
            total = sum(g for _, g in grants)
            assert total <= budget
            assert all(g == 0 or 20 <= g <= 400 for _, g in grants)


class TestAdaptLowFraction:
    def test_item_growth_outpacing_traffic_halves(self):
        growth = GrowthStats(item_growth=2.0, traffic_growth=1.0)
        assert adapt_low_fraction(0.2, growth) == pytest.approx(0.1)

    def test_equal_growth_is_identity(self):
        growth = GrowthStats(item_growth=1.3, traffic_growth=1.3)
        assert adapt_low_fraction(0.2, growth) == pytest.approx(0.2)

    def test_clamped_to_upper_bound(self):
        growth = GrowthStats(item_growth=1.0, traffic_growth=4.0)
        assert adapt_low_fraction(0.2, growth, bounds=(0.0, 0.5)) == pytest.approx(0.5)

    def test_scale_consistency(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            ig, tg = rng.uniform(0.2, 5.0, size=2)
            scale = rng.uniform(0.1, 10.0)
            a = adapt_low_fraction(0.3, GrowthStats(ig, tg))
            b = adapt_low_fraction(0.3, GrowthStats(ig * scale, tg * scale))
            assert a == pytest.approx(b)

    def test_non_positive_growth_rejected(self):
        with pytest.raises(ConfigError):
            GrowthStats(item_growth=0.0, traffic_growth=1.0)

    def test_bad_bounds_rejected(self):
        with pytest.raises(ConfigError):
            adapt_low_fraction(0.2, GrowthStats(1.0, 1.0), bounds=(0.8, 0.2))


def high_corpus_model(requests_buckets):
    """Model plus corpus where item k is High with a chosen qualifying bucket.

    Static feature dimension is 1; bucket weights rise steeply so the curve
    crosses the confidence level exactly at the chosen bucket.
    """
    # bucket logits relative to a per-item base: curve[k] = sigmoid(base + k)
    model = make_model(
        SCHEMA, [1.0, 0.0, 0.0], np.arange(SCHEMA.n_buckets, dtype=float), bias=0.0
    )
    records = []
    for k, bucket in enumerate(requests_buckets):
        # want sigmoid(x + bucket) >= cf_high and sigmoid(x + bucket - 1) < cf_high
        # with cf_high = 0.9: logit threshold ~ 2.1972
        x = 2.5 - bucket
        records.append(make_record(f"i{k:03d}", [x]))
    return model, records


class TestAllocate:
    def test_all_funded_under_ample_budget(self):
        model, records = high_corpus_model([0, 1, 2])
        config = cfg(total_budget=1000, cf_high=0.9, cf_low=0.01)
        plan = allocate(records, model, config, SCHEMA)
        verify_plan(plan, config)
        funded = {e.item_id: e.granted for e in plan.entries if e.granted > 0}
        assert funded == {"i000": 100, "i001": 199, "i002": 399}
        assert plan.total_allocated == 698

    def test_greedy_prefix_under_tight_budget(self):
        model, records = high_corpus_model([0, 1, 2])
        config = cfg(total_budget=250, cf_high=0.9, cf_low=0.01)
        plan = allocate(records, model, config, SCHEMA)
        verify_plan(plan, config)
        by_id = {e.item_id: e for e in plan.entries}
        assert by_id["i000"].granted == 100
        assert by_id["i001"].granted == 0
        assert by_id["i001"].region is Region.UNFUNDED
        assert by_id["i002"].granted == 0

    def test_leftover_high_moderate_budget_spills_to_low(self):
        model = make_model(SCHEMA, [4.0, 0.0, 0.0], np.zeros(SCHEMA.n_buckets))
        records = [
            make_record("high0", [1.0]),  # flat curve ~0.982 -> High
            make_record("low0", [-1.0]),  # flat curve ~0.018 -> Low
        ]
        config = cfg(total_budget=1000, cf_high=0.9, cf_low=0.2, low_region_fraction=0.0)
        plan = allocate(records, model, config, SCHEMA)
        verify_plan(plan, config)
        by_id = {e.item_id: e for e in plan.entries}
        assert by_id["high0"].granted == 100
        # 900 unspent impressions spilled into the low pool, capped below budget
        assert by_id["low0"].region is Region.LOW
        assert by_id["low0"].granted == 900

    def test_matches_exhaustive_search_on_small_instances(self):
        rng = np.random.default_rng(21)
        for _ in range(40):
            n = int(rng.integers(1, 11))
            buckets = rng.integers(0, SCHEMA.n_buckets, size=n)
            model, records = high_corpus_model(buckets)
            requests = {}
            config_probe = cfg(total_budget=10**9, cf_high=0.9, cf_low=0.01)
            probe = allocate(records, model, config_probe, SCHEMA)
            for e in probe.entries:
                requests[e.item_id] = e.requested
            budget = int(rng.integers(50, int(1.1 * sum(requests.values())) + 100))
            config = cfg(total_budget=budget, cf_high=0.9, cf_low=0.01)
            plan = allocate(records, model, config, SCHEMA)
            verify_plan(plan, config)
            funded = sum(1 for e in plan.entries if e.granted > 0)
            best = 0
            req_list = list(requests.values())
            for mask in range(1 << n):
                total = sum(req_list[i] for i in range(n) if mask >> i & 1)
                if total <= budget:
                    best = max(best, bin(mask).count("1"))
            assert funded == best

    def test_budget_monotonicity(self):
        model, records = high_corpus_model([0, 1, 2, 3, 4, 1, 2])
        counts = []
        for budget in (100, 300, 700, 1500, 4000):
            config = cfg(total_budget=budget, cf_high=0.9, cf_low=0.01)
            plan = allocate(records, model, config, SCHEMA)
            counts.append(sum(1 for e in plan.entries if e.granted > 0))
        assert counts == sorted(counts)

    def _cost_repair_corpus(self):
        model = make_model(SCHEMA, [4.0, 0.0, 0.0], np.zeros(SCHEMA.n_buckets))
        records = [
            make_record("mod0", [0.2]),  # flat ~0.69 -> Moderate
            make_record("mod1", [0.2]),
            ItemRecord(
                id="low0",
                features=np.array([-1.0]),
                engagement=EngagementStats(100, 5),
            ),
            ItemRecord(
                id="low1",
                features=np.array([-1.0]),
                engagement=EngagementStats(100, 50),
            ),
        ]
        return model, records

    def _cost_repair_config(self, max_cost):
        # Without a cost limit all four items end up at 1600 (cost 64).
        return cfg(
            total_budget=20_000,
            cf_high=0.9,
            cf_low=0.3,
            low_region_fraction=0.2,
            unit_cost=0.01,
            max_cost=max_cost,
        )

    def test_cost_repair_drops_worst_feedback_low_item_first(self):
        model, records = self._cost_repair_corpus()
        config = self._cost_repair_config(50.0)
        plan = allocate(records, model, config, SCHEMA)
        verify_plan(plan, config)
        by_id = {e.item_id: e for e in plan.entries}
        assert by_id["low0"].granted == 0
        assert by_id["low1"].granted == 1600
        assert by_id["mod0"].granted == 1600
        assert by_id["mod1"].granted == 1600

    def test_cost_repair_exhausts_low_before_moderate(self):
        model, records = self._cost_repair_corpus()
        config = self._cost_repair_config(20.0)
        plan = allocate(records, model, config, SCHEMA)
        verify_plan(plan, config)
        by_id = {e.item_id: e for e in plan.entries}
        assert by_id["low0"].granted == 0
        assert by_id["low1"].granted == 0
        assert by_id["mod0"].granted == 0  # descending-request tie breaks on id
        assert by_id["mod1"].granted == 1600
        assert plan.total_cost <= 20.0

    def test_schema_mismatch_rejected(self):
        model = make_model(SCHEMA3, [1.0, 0.0, 0.0], np.zeros(3))
        with pytest.raises(ConfigError, match="schema"):
            allocate([make_record("a", [1.0])], model, cfg(), SCHEMA)

    def test_duplicate_ids_rejected(self):
        model = make_model(SCHEMA, [1.0, 0.0, 0.0], np.zeros(SCHEMA.n_buckets))
        records = [make_record("a", [1.0]), make_record("a", [2.0])]
        with pytest.raises(DataError, match="duplicate"):
            allocate(records, model, cfg(), SCHEMA)

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        model = make_model(
            SCHEMA, rng.normal(size=3), np.linspace(-1, 2, SCHEMA.n_buckets), 0.1
        )
        records = [
            ItemRecord(
                id=f"i{k}",
                features=rng.normal(size=1),
                engagement=EngagementStats(50, int(rng.integers(0, 51))),
            )
            for k in range(30)
        ]
        config = cfg(total_budget=5000, low_region_fraction=0.3, cf_high=0.7)
        plan1 = allocate(records, model, config, SCHEMA)
        plan2 = allocate(records, model, config, SCHEMA)
        assert plan1 == plan2

    def test_growth_stats_move_budget_between_pools(self):
        # hm pool = T - round(f*T). At f=0.4 the Moderate request (1600) does
        # not fit in 1200; item growth outpacing traffic halves f to 0.2,
        # making room. The low item absorbs whatever is left either way.
        model = make_model(SCHEMA, [4.0, 0.0, 0.0], np.zeros(SCHEMA.n_buckets))
        records = [make_record("mod0", [0.2]), make_record("low0", [-1.0])]
        config = cfg(total_budget=2000, low_region_fraction=0.4, cf_low=0.2)
        base = allocate(records, model, config, SCHEMA)
        adapted = allocate(
            records,
            model,
            config,
            SCHEMA,
            growth=GrowthStats(item_growth=2.0, traffic_growth=1.0),
        )
        base_by_id = {e.item_id: e.granted for e in base.entries}
        adapted_by_id = {e.item_id: e.granted for e in adapted.entries}
        assert base_by_id == {"mod0": 0, "low0": 1600}
        assert adapted_by_id == {"mod0": 1600, "low0": 400}

    def test_zero_budget_leaves_everything_unfunded(self):
        model, records = high_corpus_model([0, 1])
        config = cfg(total_budget=0)
        plan = allocate(records, model, config, SCHEMA)
        assert plan.total_allocated == 0
        assert all(e.region is Region.UNFUNDED for e in plan.entries)
