import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dockalloc.demand import PoissonProfile
from dockalloc.errors import ValidationError
from dockalloc.posterior import (
    ObservedDay,
    added_capacity_impact,
    censored_subsequence,
    count_stockouts_masked,
    decreased_capacity_impact,
    days_from_csv,
    days_from_json,
    posterior_report,
    rebalancing_adjustment,
    resolve_bikes_before,
)
from dockalloc.udf import count_stockouts

events_strategy = st.lists(st.sampled_from([-1, 1]), max_size=16).map(tuple)


class TestCensoredSubsequence:
    def test_failed_return_is_dropped(self):
        assert censored_subsequence((1, -1), 0, 1) == (-1,)

    def test_ample_capacity_keeps_everything(self):
        events = (1, -1, -1, 1, 1)
        assert censored_subsequence(events, 10, 10) == events

    def test_empty_sequence(self):
        assert censored_subsequence((), 2, 2) == ()

    @given(events_strategy, st.integers(0, 5), st.integers(0, 5), st.integers(0, 5), st.integers(0, 5))
    def test_replay_identity(self, events, d, b, dd, db):
        d_small, b_small = min(d, dd), min(b, db)
        lhs = count_stockouts(events, d_small, b_small)[0] - count_stockouts(events, d, b)[0]
        rhs = count_stockouts(censored_subsequence(events, d, b), d_small, b_small)[0]
        assert lhs == rhs


class TestAddedCapacity:
    def test_unchanged_configuration_has_zero_impact(self):
        day = ObservedDay("a", 3, 3, 2, observed_events=(1, -1, 1))
        assert added_capacity_impact(day) == 0

    def test_hand_simulated_example(self):
        day = ObservedDay("a", capacity_before=1, capacity_after=2, bikes_at_open=0, observed_events=(1, 1, -1))
        assert added_capacity_impact(day) == 1

    def test_rules_agree_when_bikes_fit_and_proportion_matches(self):
        day = ObservedDay("a", capacity_before=2, capacity_after=4, bikes_at_open=4, observed_events=(1, -1))
        assert resolve_bikes_before(day, "same_bikes") == resolve_bikes_before(day, "proportional") == 2
        assert added_capacity_impact(day, "same_bikes") == added_capacity_impact(day, "proportional")

    def test_impact_is_never_negative(self, rng):
        for _ in range(200):
            cap_after = int(rng.integers(0, 8))
            b = int(rng.integers(0, cap_after + 1))
            cap_before = int(rng.integers(0, cap_after + 1))
            events = tuple(int(x) for x in rng.choice([-1, 1], size=int(rng.integers(0, 12))))
            observed = censored_subsequence(events, cap_after - b, b)
            day = ObservedDay("a", cap_before, cap_after, b, observed_events=observed)
            for rule in ("same_bikes", "proportional"):
                assert added_capacity_impact(day, rule) >= 0

    def test_wrong_direction_rejected(self):
        day = ObservedDay("a", capacity_before=5, capacity_after=3, bikes_at_open=1)
        with pytest.raises(ValidationError, match="decreased"):
            added_capacity_impact(day)

    def test_proportional_rounding_clamps(self):
        day = ObservedDay("a", capacity_before=1, capacity_after=3, bikes_at_open=2)
        # 2 * 1/3 rounds to 1; never exceeds the old capacity
        assert resolve_bikes_before(day, "proportional") == 1


class TestDecreasedCapacity:
    def test_no_censored_periods_is_deterministic(self):
        day = ObservedDay("a", capacity_before=3, capacity_after=2, bikes_at_open=2, observed_events=(-1, -1, 1))
        est = decreased_capacity_impact(day, resamples=50)
        assert est.stderr == 0.0 and est.resamples == 1

    def test_zero_rate_profile_adds_nothing(self):
        profile = PoissonProfile("a", (0.0,), (0.0,), minutes_per_interval=60.0)
        day = ObservedDay(
            "a", capacity_before=2, capacity_after=1, bikes_at_open=1, full_periods=((0, 60.0),)
        )
        est = decreased_capacity_impact(day, profile, resamples=200, seed=3)
        baseline = decreased_capacity_impact(
            ObservedDay("a", 2, 1, 1), resamples=1
        )
        assert est.mean == baseline.mean and est.stderr == 0.0

    def test_full_hour_matches_analytic_overflow(self):
        # full single-dock station for one hour at two intended returns/hour:
        # the old two-dock layout would have absorbed exactly one return
        # whenever at least one arrives.
        profile = PoissonProfile("a", (0.0,), (2 / 60,), minutes_per_interval=60.0)
        day = ObservedDay("a", capacity_before=2, capacity_after=1, bikes_at_open=1, full_periods=((0, 60.0),))
        est = decreased_capacity_impact(day, profile, resamples=10_000, seed=11)
        expect = 1 - math.exp(-2)
        assert abs(est.mean - expect) <= 3 * est.stderr

    def test_missing_profile_with_censoring_is_an_error(self):
        day = ObservedDay("a", 2, 1, 1, full_periods=((0, 30.0),))
        with pytest.raises(ValidationError, match="demand rates"):
            decreased_capacity_impact(day)

    def test_wrong_direction_rejected(self):
        day = ObservedDay("a", capacity_before=1, capacity_after=3, bikes_at_open=0)
        with pytest.raises(ValidationError, match="increased"):
            decreased_capacity_impact(day)


class TestRebalancing:
    def test_no_events_is_identity(self):
        day = ObservedDay("a", 2, 2, 1, observed_events=(1, -1), event_timestamps=(10.0, 20.0))
        events, exempt = rebalancing_adjustment(day)
        assert events == (1, -1)
        assert exempt == (False, False)

    def test_strict_mode_counts_overflowing_rebalanced_bikes(self):
        day = ObservedDay("a", 2, 2, 0, rebalancing_events=((50.0, 3),), event_timestamps=())
        events, exempt = rebalancing_adjustment(day, "strict")
        assert events == (1, 1, 1)
        assert count_stockouts_masked(events, 2, 0, exempt) == 1

    def test_optimistic_mode_exempts_them(self):
        day = ObservedDay("a", 2, 2, 0, rebalancing_events=((50.0, 3),), event_timestamps=())
        events, exempt = rebalancing_adjustment(day, "optimistic")
        assert count_stockouts_masked(events, 2, 0, exempt) == 0

    def test_splice_respects_timestamps(self):
        day = ObservedDay(
            "a", 2, 2, 0,
            observed_events=(-1, -1),
            event_timestamps=(100.0, 300.0),
            rebalancing_events=((200.0, 2),),
        )
        events, _ = rebalancing_adjustment(day)
        assert events == (-1, 1, 1, -1)

    def test_removal_rebalancing_becomes_virtual_rentals(self):
        day = ObservedDay("a", 2, 2, 2, rebalancing_events=((10.0, -1),), event_timestamps=())
        events, _ = rebalancing_adjustment(day)
        assert events == (-1,)

    def test_requires_timestamps(self):
        day = ObservedDay("a", 2, 2, 0, observed_events=(1,), rebalancing_events=((5.0, 1),))
        with pytest.raises(ValidationError, match="event_timestamps"):
            rebalancing_adjustment(day)

    def test_optimistic_never_exceeds_strict(self, rng):
        for _ in range(50):
            cap = int(rng.integers(1, 6))
            b = int(rng.integers(0, cap + 1))
            n_events = int(rng.integers(0, 8))
            events = tuple(int(x) for x in rng.choice([-1, 1], size=n_events))
            stamps = tuple(float(t) for t in np.sort(rng.uniform(0, 1000, n_events)))
            reb = ((float(rng.uniform(0, 1000)), int(rng.integers(-3, 4))),)
            day = ObservedDay("a", cap, cap, b, events, stamps, rebalancing_events=reb)
            strict_ev, strict_mask = rebalancing_adjustment(day, "strict")
            opt_ev, opt_mask = rebalancing_adjustment(day, "optimistic")
            assert count_stockouts_masked(opt_ev, cap - b, b, opt_mask) <= count_stockouts_masked(
                strict_ev, cap - b, b, strict_mask
            )


class TestReport:
    def test_four_column_structure(self):
        days = [
            ObservedDay("grown", 3, 5, 2, observed_events=(1, 1, 1, -1)),
            ObservedDay("shrunk", 4, 3, 1, observed_events=(-1,)),
        ]
        report = posterior_report(days, {}, resamples=10, seed=1)
        keys = {f"{c['rule']}/{c['rebalancing']}" for c in report["columns"]}
        assert keys == {"same_bikes/none", "same_bikes/strict", "proportional/none", "proportional/strict"}
        assert report["coverage"] == {"days": 2, "stations": 2}
        for key in keys:
            net = report["aggregate"]["net_reduction"][key]
            assert net == report["aggregate"]["reduction_where_capacity_added"][key] - report[
                "aggregate"
            ]["increase_where_capacity_taken"][key]

    def test_report_is_deterministic(self):
        profile = PoissonProfile("shrunk", (0.05,), (0.05,), minutes_per_interval=60.0)
        days = [ObservedDay("shrunk", 3, 2, 2, full_periods=((0, 45.0),))]
        a = posterior_report(days, {"shrunk": profile}, resamples=50, seed=7)
        b = posterior_report(days, {"shrunk": profile}, resamples=50, seed=7)
        assert a == b


class TestDayIO:
    def test_json_and_csv_loaders_agree(self, tmp_path):
        doc = {
            "days": [
                {
                    "station_id": "a",
                    "capacity_before": 3,
                    "capacity_after": 5,
                    "bikes_at_open": 2,
                    "observed_events": [1, -1, 1],
                    "event_timestamps": [10, 20, 30],
                    "full_periods": [[4, 12.5]],
                    "empty_periods": [],
                    "rebalancing_events": [[15, 2]],
                }
            ]
        }
        from_json = days_from_json(doc)
        csv_path = tmp_path / "days.csv"
        csv_path.write_text(
            "station_id,capacity_before,capacity_after,bikes_at_open,observed_events,"
            "event_timestamps,full_periods,empty_periods,rebalancing_events\n"
            'a,3,5,2,+-+,10|20|30,4:12.5,,15:2\n'
        )
        from_csv = days_from_csv(csv_path)
        assert from_json == from_csv
