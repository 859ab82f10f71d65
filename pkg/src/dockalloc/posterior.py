"""After-the-fact impact estimation for implemented capacity changes.

For a station whose capacity grew, the out-of-stock reduction is found by
replaying the observed (successful) arrivals against the old, smaller
configuration: every event the new station absorbed but the old one would
have refused is one avoided failure, and censoring needs no correction.
For a station whose capacity shrank, demand during recorded full/empty
stretches is unobservable, so those stretches are filled in with Poisson
draws from the station's estimated rates before the same replay.

Bikes moved by rebalancing crews can be spliced into the arrival stream as
virtual customers; the optimistic variant exempts them from the failure
count.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .demand import PoissonProfile
from .errors import ValidationError
RULES = ("same_bikes", "proportional")
REBALANCING_MODES = ("none", "strict", "optimistic")


@dataclass(frozen=True)
class ObservedDay:
    """One station-day of observations after a capacity change.

    ``observed_events`` are the successful rentals/returns in order;
    ``event_timestamps`` (seconds, same length) are only required when
    rebalancing events must be spliced in.  Full/empty periods record
    (interval_index, minutes) stretches during which returns/rentals were
    censored.  Rebalancing events are (timestamp, signed bike count).
    """

    station_id: str
    capacity_before: int
    capacity_after: int
    bikes_at_open: int
    observed_events: tuple[int, ...] = ()
    event_timestamps: tuple[float, ...] | None = None
    full_periods: tuple[tuple[int, float], ...] = ()
    empty_periods: tuple[tuple[int, float], ...] = ()
    rebalancing_events: tuple[tuple[float, int], ...] = ()

    def validate(self) -> None:
        if self.capacity_before < 0 or self.capacity_after < 0:
            raise ValidationError(f"day at {self.station_id!r}: negative capacity")
        if not 0 <= self.bikes_at_open <= self.capacity_after:
            raise ValidationError(
                f"day at {self.station_id!r}: bikes_at_open {self.bikes_at_open} outside 0..{self.capacity_after}"
            )
        for x in self.observed_events:
            if x not in (1, -1):
                raise ValidationError(f"day at {self.station_id!r}: events must be +1/-1, got {x!r}")
        if self.event_timestamps is not None and len(self.event_timestamps) != len(self.observed_events):
            raise ValidationError(f"day at {self.station_id!r}: event_timestamps length mismatch")
        for periods in (self.full_periods, self.empty_periods):
            for interval, minutes in periods:
                if interval < 0 or minutes < 0:
                    raise ValidationError(f"day at {self.station_id!r}: bad period ({interval}, {minutes})")
        times = [t for t, _ in self.rebalancing_events]
        if times != sorted(times):
            raise ValidationError(f"day at {self.station_id!r}: rebalancing events must be time-ordered")


def censored_subsequence(events: Sequence[int], d: int, b: int) -> tuple[int, ...]:
    """The events that succeed when replayed from (d, b): exactly what an
    observer at the station would record."""
    if d < 0 or b < 0:
        raise ValidationError(f"negative start state d={d}, b={b}")
    kept = []
    docks, bikes = d, b
    for x in events:
        if x == 1 and docks > 0:
            docks -= 1
            bikes += 1
            kept.append(1)
        elif x == -1 and bikes > 0:
            bikes -= 1
            docks += 1
            kept.append(-1)
    return tuple(kept)


def count_stockouts_masked(events: Sequence[int], d: int, b: int, exempt: Sequence[bool]) -> int:
    """Stockout count where exempt events still move the state on success
    but their failures are not charged."""
    docks, bikes, misses = d, b, 0
    for x, skip in zip(events, exempt):
        if x == 1:
            if docks == 0:
                misses += 0 if skip else 1
            else:
                docks -= 1
                bikes += 1
        else:
            if bikes == 0:
                misses += 0 if skip else 1
            else:
                bikes -= 1
                docks += 1
    return misses


def resolve_bikes_before(day: ObservedDay, rule: str) -> int:
    """The assumed bike count under the old capacity: either the same count
    (capped by the old capacity) or the same fill proportion, rounded half
    up and clamped."""
    if rule == "same_bikes":
        return min(day.bikes_at_open, day.capacity_before)
    if rule == "proportional":
        if day.capacity_after == 0:
            return 0
        raw = day.bikes_at_open * day.capacity_before / day.capacity_after
        return min(max(int(math.floor(raw + 0.5)), 0), day.capacity_before)
    raise ValidationError(f"unknown bike rule {rule!r}; expected one of {RULES}")


def rebalancing_adjustment(day: ObservedDay, mode: str = "strict") -> tuple[tuple[int, ...], tuple[bool, ...]]:
    """Splice rebalanced bikes into the arrival stream as virtual customers.

    Returns the adjusted sequence and a mask marking virtual events; the
    mask is all-False in strict mode (their failures count) and flags them
    in optimistic mode (failures forgiven).  Timestamped observations are
    required to place the splices.
    """
    if mode not in ("strict", "optimistic"):
        raise ValidationError(f"unknown rebalancing mode {mode!r}")
    day.validate()
    if not day.rebalancing_events:
        return day.observed_events, tuple(False for _ in day.observed_events)
    if day.event_timestamps is None:
        raise ValidationError(
            f"day at {day.station_id!r}: rebalancing events need event_timestamps to be placed"
        )
    merged: list[tuple[float, int, int, bool]] = []
    for t, x in zip(day.event_timestamps, day.observed_events):
        merged.append((t, 0, x, False))
    for t, signed in day.rebalancing_events:
        if signed == 0:
            continue
        sign = 1 if signed > 0 else -1
        for _ in range(abs(signed)):
            merged.append((t, 1, sign, mode == "optimistic"))
    merged.sort(key=lambda item: (item[0], item[1]))
    events = tuple(item[2] for item in merged)
    exempt = tuple(item[3] for item in merged)
    return events, exempt


def added_capacity_impact(day: ObservedDay, rule: str = "same_bikes", rebalancing: str = "none") -> int:
    """Avoided stockouts at a station whose capacity grew: replay the
    observed arrivals against the pre-change configuration."""
    day.validate()
    if day.capacity_before > day.capacity_after:
        raise ValidationError(
            f"day at {day.station_id!r}: capacity decreased; use decreased_capacity_impact"
        )
    if rebalancing == "none":
        events: tuple[int, ...] = day.observed_events
        exempt = tuple(False for _ in events)
    else:
        events, exempt = rebalancing_adjustment(day, rebalancing)
    b_before = resolve_bikes_before(day, rule)
    d_before = day.capacity_before - b_before
    return count_stockouts_masked(events, d_before, b_before, exempt)


@dataclass(frozen=True)
class ImpactEstimate:
    mean: float
    stderr: float
    resamples: int
    seed: int


def _insertion_points(
    events: Sequence[int],
    d: int,
    b: int,
    periods: Sequence[tuple[int, float, str]],
) -> list[tuple[int, int, float, str]]:
    """Position each censored period along the observed trajectory: the
    first index at or after the previous period where the recorded state
    (full or empty) actually holds."""
    capacity = d + b
    states = [b]
    bikes = b
    docks = d
    for x in events:
        if x == 1 and docks > 0:
            docks -= 1
            bikes += 1
        elif x == -1 and bikes > 0:
            bikes -= 1
            docks += 1
        states.append(bikes)
    out = []
    cursor = 0
    for interval, minutes, kind in sorted(periods, key=lambda p: (p[0], p[2])):
        target = capacity if kind == "full" else 0
        pos = next((q for q in range(cursor, len(states)) if states[q] == target), None)
        if pos is None:
            raise ValidationError(
                f"recorded {kind} period in interval {interval} but the observed day never reaches that state"
            )
        out.append((pos, interval, minutes, kind))
        cursor = pos
    return out


def decreased_capacity_impact(
    day: ObservedDay,
    profile: PoissonProfile | None = None,
    rule: str = "same_bikes",
    seed: int = 0,
    resamples: int = 1000,
    rebalancing: str = "none",
) -> ImpactEstimate:
    """Extra stockouts caused at a station whose capacity shrank.

    Fills the censored full/empty stretches with Poisson draws of intended
    returns/rentals, then compares the replay under the new (smaller) and
    old configurations; reported as a non-negative increase.
    """
    day.validate()
    if day.capacity_before < day.capacity_after:
        raise ValidationError(
            f"day at {day.station_id!r}: capacity increased; use added_capacity_impact"
        )
    if resamples < 1:
        raise ValidationError(f"resamples must be >= 1, got {resamples}")
    if rebalancing == "none":
        events: tuple[int, ...] = day.observed_events
        exempt = tuple(False for _ in events)
    else:
        events, exempt = rebalancing_adjustment(day, rebalancing)

    d_after = day.capacity_after - day.bikes_at_open
    b_after = day.bikes_at_open
    b_before = resolve_bikes_before(day, rule)
    d_before = day.capacity_before - b_before

    periods = [(i, m, "full") for i, m in day.full_periods] + [(i, m, "empty") for i, m in day.empty_periods]
    if not periods:
        diff = count_stockouts_masked(events, d_after, b_after, exempt) - count_stockouts_masked(
            events, d_before, b_before, exempt
        )
        return ImpactEstimate(mean=float(diff), stderr=0.0, resamples=1, seed=seed)

    if profile is None:
        raise ValidationError(
            f"day at {day.station_id!r} has censored periods; demand rates are required to fill them in"
        )
    profile.validate()
    for interval, _, _ in periods:
        if interval >= profile.intervals:
            raise ValidationError(f"period interval {interval} outside the profile horizon")

    spots = _insertion_points(events, d_after, b_after, periods)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    diffs = np.empty(resamples)
    for r in range(resamples):
        filled: list[int] = []
        mask: list[bool] = []
        cursor = 0
        for pos, interval, minutes, kind in spots:
            filled.extend(events[cursor:pos])
            mask.extend(exempt[cursor:pos])
            if kind == "full":
                count = int(rng.poisson(profile.return_rates[interval] * minutes))
                filled.extend([1] * count)
            else:
                count = int(rng.poisson(profile.rental_rates[interval] * minutes))
                filled.extend([-1] * count)
            mask.extend([False] * (len(filled) - len(mask)))
            cursor = pos
        filled.extend(events[cursor:])
        mask.extend(exempt[cursor:])
        diffs[r] = count_stockouts_masked(filled, d_after, b_after, mask) - count_stockouts_masked(
            filled, d_before, b_before, mask
        )
    mean = float(diffs.mean())
    stderr = 0.0 if resamples == 1 else float(diffs.std(ddof=1) / math.sqrt(resamples))
    return ImpactEstimate(mean=mean, stderr=stderr, resamples=resamples, seed=seed)


def posterior_report(
    days: Sequence[ObservedDay],
    profiles: dict[str, PoissonProfile],
    *,
    resamples: int = 1000,
    seed: int = 0,
    rebalancing_mode: str = "strict",
) -> dict:
    """Station-level and aggregate impact under the four evaluation columns
    (bike rule x rebalancing on/off)."""
    if rebalancing_mode not in ("strict", "optimistic"):
        raise ValidationError(f"unknown rebalancing mode {rebalancing_mode!r}")
    columns = [
        {"rule": rule, "rebalancing": reb}
        for rule in RULES
        for reb in ("none", rebalancing_mode)
    ]
    col_keys = [f"{c['rule']}/{c['rebalancing']}" for c in columns]
    per_station: dict[str, dict] = {}
    totals_added = {k: 0.0 for k in col_keys}
    totals_removed = {k: 0.0 for k in col_keys}
    counted_days = 0

    for idx, day in enumerate(days):
        day.validate()
        entry = per_station.setdefault(
            day.station_id,
            {"station_id": day.station_id, "days": 0, "added": dict.fromkeys(col_keys, 0.0), "removed": dict.fromkeys(col_keys, 0.0)},
        )
        entry["days"] += 1
        counted_days += 1
        increased = day.capacity_after >= day.capacity_before
        for col, key in zip(columns, col_keys):
            reb = col["rebalancing"]
            if increased:
                value = float(added_capacity_impact(day, col["rule"], reb))
                entry["added"][key] += value
                totals_added[key] += value
            else:
                est = decreased_capacity_impact(
                    day,
                    profiles.get(day.station_id),
                    col["rule"],
                    seed=int(np.random.SeedSequence([seed, idx]).generate_state(1)[0]),
                    resamples=resamples,
                    rebalancing=reb,
                )
                entry["removed"][key] += est.mean
                totals_removed[key] += est.mean

    return {
        "columns": columns,
        "stations": [per_station[k] for k in sorted(per_station)],
        "aggregate": {
            "reduction_where_capacity_added": totals_added,
            "increase_where_capacity_taken": totals_removed,
            "net_reduction": {k: totals_added[k] - totals_removed[k] for k in col_keys},
        },
        "coverage": {"days": counted_days, "stations": len(per_station)},
        "resamples": resamples,
        "seed": seed,
        "rebalancing_mode": rebalancing_mode,
    }


def _day_from_json(doc: dict) -> ObservedDay:
    try:
        day = ObservedDay(
            station_id=str(doc["station_id"]),
            capacity_before=int(doc["capacity_before"]),
            capacity_after=int(doc["capacity_after"]),
            bikes_at_open=int(doc["bikes_at_open"]),
            observed_events=tuple(int(x) for x in doc.get("observed_events", [])),
            event_timestamps=(
                tuple(float(t) for t in doc["event_timestamps"]) if doc.get("event_timestamps") is not None else None
            ),
            full_periods=tuple((int(i), float(m)) for i, m in doc.get("full_periods", [])),
            empty_periods=tuple((int(i), float(m)) for i, m in doc.get("empty_periods", [])),
            rebalancing_events=tuple((float(t), int(c)) for t, c in doc.get("rebalancing_events", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed observed-day document: {exc}") from exc
    day.validate()
    return day


def days_from_json(doc) -> list[ObservedDay]:
    rows = doc["days"] if isinstance(doc, dict) else doc
    return [_day_from_json(row) for row in rows]


def _parse_events(text: str) -> tuple[int, ...]:
    return tuple(1 if ch == "+" else -1 for ch in text.strip() if ch in "+-")


def _parse_pairs(text: str) -> list[tuple[float, float]]:
    out = []
    for chunk in text.split("|"):
        chunk = chunk.strip()
        if not chunk:
            continue
        left, right = chunk.split(":")
        out.append((float(left), float(right)))
    return out


def days_from_csv(path: str | Path) -> list[ObservedDay]:
    """CSV variant of the observed-day schema; events are a +/- string,
    periods ``interval:minutes`` and rebalancing ``timestamp:count`` chunks
    joined by ``|``."""
    days = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"station_id", "capacity_before", "capacity_after", "bikes_at_open"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValidationError(f"{path}: days CSV must include {sorted(required)}")
        for row in reader:
            timestamps = None
            if row.get("event_timestamps"):
                timestamps = tuple(float(t) for t in row["event_timestamps"].split("|") if t.strip())
            day = ObservedDay(
                station_id=row["station_id"].strip(),
                capacity_before=int(row["capacity_before"]),
                capacity_after=int(row["capacity_after"]),
                bikes_at_open=int(row["bikes_at_open"]),
                observed_events=_parse_events(row.get("observed_events", "")),
                event_timestamps=timestamps,
                full_periods=tuple((int(i), m) for i, m in _parse_pairs(row.get("full_periods", ""))),
                empty_periods=tuple((int(i), m) for i, m in _parse_pairs(row.get("empty_periods", ""))),
                rebalancing_events=tuple((t, int(c)) for t, c in _parse_pairs(row.get("rebalancing_events", ""))),
            )
            day.validate()
            days.append(day)
    return days


def load_days(path: str | Path) -> list[ObservedDay]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return days_from_csv(path)
    return days_from_json(json.loads(path.read_text()))
