from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dockalloc.demand import PoissonProfile
from dockalloc.errors import CapacityLimitError, ValidationError
from dockalloc.udf import (
    CostTable,
    FiniteProfile,
    LazyDailyCost,
    check_multimodular,
    cost_table_from_finite,
    count_stockouts,
    daily_cost_poisson,
    daily_coster,
    expected_cost_finite,
    interval_cost_poisson,
    load_cost_table,
    save_cost_table,
)
from dockalloc.oracle import simulate_cost

events_strategy = st.lists(st.sampled_from([-1, 1]), max_size=14).map(tuple)


class TestCountStockouts:
    def test_zero_capacity_fails_every_arrival(self):
        assert count_stockouts((1,), 0, 0)[0] == 1

    def test_return_then_two_rentals_served_with_one_dock_one_bike(self):
        assert count_stockouts((1, -1, -1), 1, 1)[0] == 0

    def test_same_sequence_with_no_bike_misses_once(self):
        assert count_stockouts((1, -1, -1), 1, 0)[0] == 1

    def test_final_state_reported(self):
        _, state = count_stockouts((1, 1, -1), 2, 0)
        assert (state.open_docks, state.bikes, state.stockouts) == (1, 1, 0)

    def test_rejects_bad_event(self):
        with pytest.raises(ValidationError):
            count_stockouts((2,), 1, 1)

    @given(events_strategy, st.integers(0, 6), st.integers(0, 6))
    def test_capacity_is_conserved(self, events, d, b):
        _, state = count_stockouts(events, d, b)
        assert state.open_docks + state.bikes == d + b

    @given(events_strategy, st.integers(0, 5), st.integers(0, 5), st.integers(0, 3), st.integers(0, 3))
    def test_smaller_stations_miss_at_least_as_much(self, events, d, b, dd, db):
        bigger = count_stockouts(events, d + dd, b + db)[0]
        smaller = count_stockouts(events, d, b)[0]
        assert smaller >= bigger


class TestFiniteProfiles:
    def test_reference_half_half_values(self):
        p = FiniteProfile((((-1,), Fraction(1, 2)), ((1, -1), Fraction(1, 2))))
        assert expected_cost_finite(p, 0, 1) == Fraction(1, 2)
        p2 = FiniteProfile((((1,), Fraction(1, 2)),))
        assert expected_cost_finite(p2, 1, 0) == 0

    def test_empty_profile_costs_nothing(self):
        assert expected_cost_finite(FiniteProfile(()), 3, 2) == 0

    def test_probability_sum_above_one_rejected(self):
        p = FiniteProfile((((1,), 0.7), ((-1,), 0.5)))
        with pytest.raises(ValidationError, match="exceeding 1"):
            expected_cost_finite(p, 1, 1)

    @given(st.integers(0, 4), st.integers(0, 4))
    def test_bike_sweep_at_fixed_capacity_is_convex(self, d, b):
        p = FiniteProfile((((1, -1, -1, 1), 0.5), ((-1, -1), 0.25)))
        cap = d + b + 2
        vals = [expected_cost_finite(p, cap - k, k) for k in range(cap + 1)]
        for k in range(1, cap):
            assert vals[k + 1] - vals[k] >= vals[k] - vals[k - 1] - 1e-12


class TestIntervalAnalysis:
    def test_no_demand_is_identity(self):
        r = interval_cost_poisson(0.0, 0.0, 30.0, 3)
        assert np.allclose(r.transition, np.eye(4))
        assert np.allclose(r.expected_events, 0.0)

    def test_zero_capacity_counts_every_arrival(self):
        r = interval_cost_poisson(0.4, 0.3, 10.0, 0)
        assert r.expected_events[0] == pytest.approx(7.0, abs=1e-8)

    def test_full_station_returns_only(self):
        # one return per minute at a full single-dock station: every return fails
        r = interval_cost_poisson(0.0, 1.0, 1.0, 1)
        assert r.expected_events[1] == pytest.approx(1.0, abs=1e-8)
        mean, stderr = simulate_cost(
            PoissonProfile("x", (0.0,), (1.0,), minutes_per_interval=1.0), 0, 1, 100_000, seed=3
        )
        assert abs(mean - r.expected_events[1]) <= 3 * stderr + 1e-9

    def test_rows_are_stochastic(self):
        r = interval_cost_poisson(0.7, 0.2, 30.0, 6)
        assert np.allclose(r.transition.sum(axis=1), 1.0, atol=1e-9)
        assert (r.transition >= 0).all()

    def test_rejects_bad_rates(self):
        with pytest.raises(ValidationError):
            interval_cost_poisson(float("nan"), 0.1, 30.0, 2)
        with pytest.raises(ValidationError):
            interval_cost_poisson(-0.1, 0.1, 30.0, 2)


class TestDailyCost:
    def test_zero_rates_zero_table(self):
        p = PoissonProfile("z", (0.0, 0.0), (0.0, 0.0))
        table = daily_cost_poisson(p, 5)
        assert all(v == 0 for row in table.values for v in row)

    def test_single_interval_zero_capacity(self):
        p = PoissonProfile("z", (0.2,), (0.1,), minutes_per_interval=30.0)
        table = daily_cost_poisson(p, 0)
        assert table.cost(0, 0) == pytest.approx(0.3 * 30.0, abs=1e-8)

    def test_split_interval_matches_merged(self):
        merged = daily_cost_poisson(PoissonProfile("m", (0.15,), (0.1,), minutes_per_interval=60.0), 8)
        split = daily_cost_poisson(PoissonProfile("s", (0.15, 0.15), (0.1, 0.1), minutes_per_interval=30.0), 8)
        for row_m, row_s in zip(merged.values, split.values):
            for a, b in zip(row_m, row_s):
                assert a == pytest.approx(b, abs=1e-8)

    def test_lazy_matches_eager(self):
        p = PoissonProfile("l", (0.1, 0.3), (0.2, 0.05))
        lazy = LazyDailyCost(p)
        eager = lazy.materialize(6)
        for s in range(7):
            for b in range(s + 1):
                assert lazy.cost(s - b, b) == eager.cost(s - b, b)

    def test_capacity_limit_enforced(self):
        p = PoissonProfile("c", (0.1,), (0.1,))
        with pytest.raises(CapacityLimitError):
            LazyDailyCost(p, capacity_limit=16).cost(10, 7)

    def test_simulation_agreement_randomized(self, rng):
        for case in range(6):
            intervals = int(rng.integers(1, 4))
            p = PoissonProfile(
                f"r{case}",
                tuple(float(x) for x in rng.uniform(0, 0.2, intervals)),
                tuple(float(x) for x in rng.uniform(0, 0.2, intervals)),
            )
            cap = int(rng.integers(0, 11))
            b = int(rng.integers(0, cap + 1))
            analytic = daily_coster(p).cost(cap - b, b)
            mean, stderr = simulate_cost(p, cap - b, b, 30_000, seed=100 + case)
            assert abs(analytic - mean) <= 3 * stderr + 1e-9


class TestCostTable:
    def test_json_round_trip_floats_and_fractions(self, tmp_path):
        table = CostTable("s", 2, ((Fraction(1, 2),), (0.25, Fraction(3, 2)), (0.0, 0.0, 1.0)))
        path = tmp_path / "t.json"
        save_cost_table(path, table)
        loaded = load_cost_table(path)
        assert loaded.cost(0, 0) == Fraction(1, 2)
        assert loaded.cost(0, 1) == Fraction(3, 2)
        assert loaded.cost(1, 0) == 0.25
        assert loaded.cost(0, 2) == 1.0

    def test_anti_diagonal_layout(self):
        p = FiniteProfile((((-1,), 1.0),))
        table = cost_table_from_finite(p, 2, station_id="x")
        # row s lists b = 0..s
        assert table.values[1] == (expected_cost_finite(p, 1, 0), expected_cost_finite(p, 0, 1))

    def test_marginal_accessor(self):
        p = FiniteProfile((((-1,), 1.0),))
        table = cost_table_from_finite(p, 3)
        assert table.marginal(1, 0, -1, 1) == table.cost(0, 1) - table.cost(1, 0)


class TestMultimodularity:
    @given(st.data())
    def test_finite_profile_tables_pass(self, data):
        n_atoms = data.draw(st.integers(0, 3))
        atoms = []
        remaining = Fraction(1)
        for _ in range(n_atoms):
            p = data.draw(st.sampled_from([Fraction(1, 8), Fraction(1, 4), Fraction(1, 2)]))
            if p > remaining:
                continue
            remaining -= p
            events = data.draw(events_strategy)
            atoms.append((events, p))
        table = cost_table_from_finite(FiniteProfile(tuple(atoms)), 6)
        assert check_multimodular(table) == []

    def test_poisson_tables_pass(self, rng):
        for _ in range(4):
            p = PoissonProfile(
                "m",
                tuple(float(x) for x in rng.uniform(0, 0.3, 4)),
                tuple(float(x) for x in rng.uniform(0, 0.3, 4)),
            )
            table = daily_cost_poisson(p, int(rng.integers(3, 10)))
            assert check_multimodular(table) == []

    def test_crafted_violation_is_reported_exactly(self):
        # equal-capacity square with the diagonal inequality broken at the origin
        table = CostTable("bad", 2, ((1.0,), (1.0, 1.0), (1.0, 0.0, 1.0)))
        violations = check_multimodular(table)
        assert {(v.inequality, v.d, v.b) for v in violations} == {(1, 0, 0), (6, 0, 0)}
        assert all(v.amount == pytest.approx(1.0) for v in violations)
