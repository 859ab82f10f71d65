"""Independent verification tools: exhaustive search, event simulation, and
reference instances.

Everything here deliberately avoids the solver's machinery: the brute-force
optimum enumerates allocations directly, the simulator plays out arrival
streams event by event, and the fixtures pin down small instances whose
exact values are known.  The ``verify`` CLI subcommand drives these checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .allocator import Allocation, Constraints, dock_move_distance
from .demand import PoissonProfile
from .errors import ValidationError
from .udf import (
    CostSource,
    FiniteProfile,
    Number,
    cost_table_from_finite,
    LazyDailyCost,
)

SEARCH_SPACE_GUARD = 10_000_000


@dataclass(frozen=True)
class StationSpec:
    id: str
    profile: FiniteProfile | PoissonProfile
    lower: int
    upper: int
    baseline_docks: int
    baseline_bikes: int


@dataclass(frozen=True)
class InstanceSpec:
    """Self-contained optimization instance, small enough to enumerate."""

    stations: tuple[StationSpec, ...]
    bike_budget: int
    dock_budget: int
    max_moves: int | None = None
    tradeoff: tuple[int, int] | None = None

    def constraints(self) -> Constraints:
        return Constraints(
            bike_budget=self.bike_budget,
            dock_budget=self.dock_budget,
            baseline_docks=tuple(s.baseline_docks for s in self.stations),
            baseline_bikes=tuple(s.baseline_bikes for s in self.stations),
            lower=tuple(s.lower for s in self.stations),
            upper=tuple(s.upper for s in self.stations),
            max_moves=self.max_moves,
            tradeoff=self.tradeoff,
        )

    def tables(self) -> list[CostSource]:
        out: list[CostSource] = []
        for s in self.stations:
            if isinstance(s.profile, FiniteProfile):
                out.append(cost_table_from_finite(s.profile, s.upper, station_id=s.id))
            else:
                out.append(LazyDailyCost(s.profile))
        return out


def _profile_to_json(profile) -> dict:
    if isinstance(profile, FiniteProfile):
        atoms = []
        for events, p in profile.atoms:
            atoms.append({"events": list(events), "p": str(p) if isinstance(p, Fraction) else p})
        return {"kind": "finite", "atoms": atoms}
    return {
        "kind": "poisson",
        "rental_rates": list(profile.rental_rates),
        "return_rates": list(profile.return_rates),
        "minutes_per_interval": profile.minutes_per_interval,
        "start_hour": profile.start_hour,
    }


def _profile_from_json(doc: dict, station_id: str):
    kind = doc.get("kind")
    if kind == "finite":
        atoms = []
        for atom in doc["atoms"]:
            p = atom["p"]
            atoms.append((tuple(int(x) for x in atom["events"]), Fraction(p) if isinstance(p, str) else float(p)))
        profile = FiniteProfile(tuple(atoms))
        profile.validate()
        return profile
    if kind == "poisson":
        profile = PoissonProfile(
            station_id=station_id,
            rental_rates=tuple(float(r) for r in doc["rental_rates"]),
            return_rates=tuple(float(r) for r in doc["return_rates"]),
            minutes_per_interval=float(doc.get("minutes_per_interval", 30.0)),
            start_hour=float(doc.get("start_hour", 0.0)),
        )
        profile.validate()
        return profile
    raise ValidationError(f"unknown profile kind {kind!r}")


def instance_to_json(spec: InstanceSpec) -> dict:
    return {
        "stations": [
            {
                "id": s.id,
                "profile": _profile_to_json(s.profile),
                "lower": s.lower,
                "upper": s.upper,
                "baseline_docks": s.baseline_docks,
                "baseline_bikes": s.baseline_bikes,
            }
            for s in spec.stations
        ],
        "bike_budget": spec.bike_budget,
        "dock_budget": spec.dock_budget,
        "max_moves": spec.max_moves,
        "tradeoff": list(spec.tradeoff) if spec.tradeoff else None,
    }


def instance_from_json(doc: dict) -> InstanceSpec:
    try:
        stations = tuple(
            StationSpec(
                id=str(s["id"]),
                profile=_profile_from_json(s["profile"], str(s["id"])),
                lower=int(s["lower"]),
                upper=int(s["upper"]),
                baseline_docks=int(s["baseline_docks"]),
                baseline_bikes=int(s["baseline_bikes"]),
            )
            for s in doc["stations"]
        )
        tradeoff = doc.get("tradeoff")
        return InstanceSpec(
            stations=stations,
            bike_budget=int(doc["bike_budget"]),
            dock_budget=int(doc["dock_budget"]),
            max_moves=None if doc.get("max_moves") is None else int(doc["max_moves"]),
            tradeoff=None if tradeoff is None else (int(tradeoff[0]), int(tradeoff[1])),
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed instance document: {exc}") from exc


def save_instance(path: str | Path, spec: InstanceSpec) -> None:
    Path(path).write_text(json.dumps(instance_to_json(spec), indent=2, sort_keys=True))


def load_instance(path: str | Path) -> InstanceSpec:
    return instance_from_json(json.loads(Path(path).read_text()))


def _best_bikes(caps: Sequence[int], bike_budget: int, tables: Sequence[CostSource]):
    """Exact cheapest placement of at most ``bike_budget`` bikes onto fixed
    capacities, by dynamic programming over stations (no convexity used)."""
    n = len(caps)
    budget = bike_budget
    value = [0] * (budget + 1)
    choice: list[list[int]] = []
    for i in range(n):
        row_choice = [0] * (budget + 1)
        new_value = [None] * (budget + 1)
        for beta in range(budget + 1):
            best = None
            best_b = 0
            for b in range(min(caps[i], beta) + 1):
                v = tables[i].cost(caps[i] - b, b) + value[beta - b]
                if best is None or v < best:
                    best = v
                    best_b = b
            new_value[beta] = best
            row_choice[beta] = best_b
        value = new_value
        choice.append(row_choice)
    bikes = [0] * n
    beta = budget
    for i in range(n - 1, -1, -1):
        bikes[i] = choice[i][beta]
        beta -= bikes[i]
    return value[budget], tuple(bikes)


def _capacity_vectors(lower, upper, total_max):
    """All capacity vectors within the box with sum at most ``total_max``."""
    n = len(lower)

    def rec(i, remaining):
        if i == n:
            yield ()
            return
        # prune: the rest must at least reach its lower bounds
        rest_lower = sum(lower[i + 1 :])
        for c in range(lower[i], min(upper[i], remaining - rest_lower) + 1):
            for tail in rec(i + 1, remaining - c):
                yield (c,) + tail

    yield from rec(0, total_max)


def _guard_search_space(spec: InstanceSpec) -> None:
    size = spec.bike_budget + 1
    for s in spec.stations:
        size *= s.upper - s.lower + 1
    if size > SEARCH_SPACE_GUARD:
        raise ValidationError(
            f"instance search space ~{size:.3g} exceeds the enumeration guard {SEARCH_SPACE_GUARD:.0g}"
        )


def brute_force_optimum(
    spec: InstanceSpec,
    z_values: Sequence[int] | None = None,
) -> dict[int, tuple[Allocation, Number]]:
    """Exact optimum for every moved-dock cap ``z`` by full enumeration.

    Enumerates all capacity vectors within the box with total at most the
    dock budget, prices each by the exact bike placement DP, and takes, for
    each ``z``, the best vector within dock-move distance ``2z`` of the
    baseline.
    """
    _guard_search_space(spec)
    constraints = spec.constraints()
    constraints.validate(len(spec.stations))
    tables = spec.tables()
    baseline = constraints.baseline_capacities

    entries = []  # (distance, value, caps)
    for caps in _capacity_vectors(constraints.lower, constraints.upper, constraints.dock_budget):
        value, _ = _best_bikes(caps, constraints.bike_budget, tables)
        entries.append((dock_move_distance(caps, baseline), value, caps))
    entries.sort(key=lambda e: e[0])

    if z_values is None:
        max_z = (entries[-1][0] + 1) // 2 if entries else 0
        z_values = range(max_z + 1)

    out: dict[int, tuple[Allocation, Number]] = {}
    for z in z_values:
        best = None
        for dist, value, caps in entries:
            if dist > 2 * z:
                break
            if best is None or value < best[0]:
                best = (value, caps)
        if best is None:
            raise ValidationError(f"no feasible allocation within {z} moves")
        value, caps = best
        _, bikes = _best_bikes(caps, constraints.bike_budget, tables)
        docks = tuple(c - b for c, b in zip(caps, bikes))
        out[z] = (Allocation(docks, bikes), value)
    return out


def brute_force_tradeoff(spec: InstanceSpec) -> tuple[int, int, Allocation, Number]:
    """Exhaustive optimum of the joint move/buy problem: for every feasible
    count of newly bought docks, enumerate allocations under the enlarged
    dock budget and the combined distance allowance."""
    if spec.tradeoff is None:
        raise ValidationError("instance has no tradeoff parameters")
    k, joint = spec.tradeoff
    base = spec.constraints()
    best = None
    for new in range(joint // k + 1):
        z = joint - k * new
        inner = replace(
            spec,
            dock_budget=spec.dock_budget + new,
            max_moves=None,
            tradeoff=None,
        )
        _guard_search_space(inner)
        constraints = inner.constraints()
        tables = inner.tables()
        baseline = constraints.baseline_capacities
        allowance = 2 * z + new
        for caps in _capacity_vectors(constraints.lower, constraints.upper, constraints.dock_budget):
            if dock_move_distance(caps, baseline) > allowance:
                continue
            value, bikes = _best_bikes(caps, constraints.bike_budget, tables)
            if best is None or value < best[0]:
                docks = tuple(c - b for c, b in zip(caps, bikes))
                best = (value, new, z, Allocation(docks, bikes))
    value, new, z, alloc = best
    return new, z, alloc, value


def simulate_cost(
    profile: PoissonProfile,
    d: int,
    b: int,
    trials: int,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte-Carlo estimate of the daily cost: sample the merged rental and
    return streams interval by interval and count failed arrivals.

    Uses the counter-based Philox generator so runs are reproducible from
    the seed alone.  Returns (mean, standard error).
    """
    if trials < 1:
        raise ValidationError(f"trials must be >= 1, got {trials}")
    profile.validate()
    if d < 0 or b < 0:
        raise ValidationError(f"negative state d={d}, b={b}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    cap = d + b
    minutes = profile.minutes_per_interval
    bikes = np.full(trials, b, dtype=np.int64)
    misses = np.zeros(trials, dtype=np.int64)
    for mu, lam in zip(profile.rental_rates, profile.return_rates):
        rem_rent = rng.poisson(mu * minutes, trials)
        rem_ret = rng.poisson(lam * minutes, trials)
        while True:
            total = rem_rent + rem_ret
            active = total > 0
            if not active.any():
                break
            u = rng.random(trials)
            # the next event is a rental with probability rem_rent / total
            is_rent = active & (u * total < rem_rent)
            is_ret = active & ~is_rent
            misses += (is_rent & (bikes == 0)) + (is_ret & (bikes == cap))
            bikes -= is_rent & (bikes > 0)
            bikes += is_ret & (bikes < cap)
            rem_rent -= is_rent
            rem_ret -= is_ret
    mean = float(misses.mean())
    if trials == 1:
        return mean, 0.0
    stderr = float(misses.std(ddof=1) / math.sqrt(trials))
    return mean, stderr


def exchange_trap_instance() -> tuple[InstanceSpec, dict]:
    """Three stations where single-exchange descent from the bike-optimal
    baseline stalls above the true optimum, so dock-moves (which also carry
    a bike) are genuinely needed.  Extras name the relevant allocations."""
    half = Fraction(1, 2)
    stations = (
        StationSpec("i", FiniteProfile((((-1,), half), ((1, -1), half))), 0, 3, 0, 1),
        StationSpec("j", FiniteProfile((((1,), half),)), 0, 3, 1, 0),
        StationSpec("k", FiniteProfile((((1, -1, -1), Fraction(1)),)), 0, 3, 1, 0),
    )
    spec = InstanceSpec(stations=stations, bike_budget=1, dock_budget=3)
    extras = {
        "stuck": Allocation((0, 1, 1), (1, 0, 0)),
        "optimal": Allocation((1, 0, 1), (0, 0, 1)),
        "stuck_objective": Fraction(3, 2),
        "optimal_objective": Fraction(1),
        # Single coordinate exchanges from the stuck allocation: one more
        # empty dock at i (breaks the dock budget), the bike coordinate
        # shifted i->k, or a dock coordinate shifted j->i.  None improves.
        "exchange_neighbors": [
            {"allocation": Allocation((1, 1, 1), (1, 0, 0)), "feasible": False},
            {"allocation": Allocation((0, 1, 1), (0, 0, 1)), "feasible": True},
            {"allocation": Allocation((1, 0, 1), (1, 0, 0)), "feasible": True},
        ],
    }
    return spec, extras


def midpoint_gap_instance() -> tuple[InstanceSpec, dict]:
    """Four stations and a one-move cap: two feasible allocations whose
    componentwise midpoints include an infeasible one, so the constrained
    feasible set has no discrete midpoint structure."""
    empty = FiniteProfile(())
    stations = tuple(
        StationSpec(f"s{i}", empty, 0, 2, d, 0) for i, d in enumerate((0, 1, 0, 1))
    )
    spec = InstanceSpec(stations=stations, bike_budget=0, dock_budget=2, max_moves=1)
    extras = {
        "baseline": (0, 1, 0, 1),
        "feasible": [(1, 0, 0, 1), (0, 1, 1, 0), (0, 1, 0, 1)],
        "infeasible": [(1, 0, 1, 0)],
    }
    return spec, extras


def counterexample_fixtures() -> dict[str, tuple[InstanceSpec, dict]]:
    return {
        "exchange_trap": exchange_trap_instance(),
        "midpoint_gap": midpoint_gap_instance(),
    }


def feasible_within_moves(spec: InstanceSpec, caps: Sequence[int], z: int) -> bool:
    """Whether a capacity vector is reachable within ``z`` dock moves and
    respects budgets and box bounds."""
    constraints = spec.constraints()
    if sum(caps) > constraints.dock_budget:
        return False
    if any(not l <= c <= u for l, c, u in zip(constraints.lower, caps, constraints.upper)):
        return False
    return dock_move_distance(caps, constraints.baseline_capacities) <= 2 * z


def random_finite_profile(rng: np.random.Generator, max_atoms: int = 3, max_len: int = 5, denom: int = 8) -> FiniteProfile:
    """Random finite profile with dyadic probabilities, so every expected
    cost is exactly representable in binary floating point."""
    remaining = denom
    atoms = []
    for _ in range(int(rng.integers(0, max_atoms + 1))):
        if remaining == 0:
            break
        num = int(rng.integers(1, remaining + 1))
        remaining -= num
        length = int(rng.integers(1, max_len + 1))
        events = tuple(int(x) for x in rng.choice([-1, 1], size=length))
        atoms.append((events, num / denom))
    return FiniteProfile(tuple(atoms))


def random_instance(
    rng: np.random.Generator,
    n_max: int = 4,
    budget_max: int = 10,
    max_atoms: int = 3,
    max_len: int = 5,
) -> InstanceSpec:
    """Small random instance with dyadic finite profiles and random box
    bounds; the baseline uses the full dock budget."""
    n = int(rng.integers(2, n_max + 1))
    dock_budget = int(rng.integers(n, budget_max + 1))
    bike_budget = int(rng.integers(0, dock_budget + 1))
    caps = rng.multinomial(dock_budget, [1.0 / n] * n)
    stations = []
    bikes_left = int(rng.integers(0, bike_budget + 1))
    for i in range(n):
        cap = int(caps[i])
        lower = int(rng.integers(0, cap + 1))
        upper = cap + int(rng.integers(0, 4))
        b = min(bikes_left, int(rng.integers(0, cap + 1)))
        bikes_left -= b
        stations.append(
            StationSpec(
                id=f"s{i}",
                profile=random_finite_profile(rng, max_atoms, max_len),
                lower=lower,
                upper=upper,
                baseline_docks=cap - b,
                baseline_bikes=b,
            )
        )
    return InstanceSpec(tuple(stations), bike_budget, dock_budget)


def synthetic_scenario(n_stations: int = 50, seed: int = 2026, max_moves: int = 150) -> InstanceSpec:
    """Seeded city-scale scenario with commuter-shaped Poisson demand.

    Stations lean toward morning rentals, morning returns, or balanced
    traffic; capacities and fill levels vary, and the dock budget equals the
    allocated total so the run is a pure reallocation.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    intervals = 48
    hours = (np.arange(intervals) + 0.5) * 0.5

    def bump(center, width):
        return np.exp(-0.5 * ((hours - center) / width) ** 2)

    stations = []
    for i in range(n_stations):
        kind = i % 3
        base = rng.uniform(0.01, 0.05)
        peak = rng.uniform(0.1, 0.35)
        if kind == 0:  # residential: rentals out in the morning, returns back at night
            rentals = base + peak * bump(8.5, 1.5)
            returns = base + peak * bump(18.0, 2.0)
        elif kind == 1:  # office: the mirror image
            rentals = base + peak * bump(18.0, 2.0)
            returns = base + peak * bump(8.5, 1.5)
        else:  # mixed traffic
            rentals = base + peak * 0.5 * (bump(12.0, 4.0))
            returns = base + peak * 0.5 * (bump(13.0, 4.0))
        cap = int(rng.integers(15, 36))
        bikes = int(round(cap * rng.uniform(0.25, 0.75)))
        stations.append(
            StationSpec(
                id=f"st{i:03d}",
                profile=PoissonProfile(
                    station_id=f"st{i:03d}",
                    rental_rates=tuple(float(r) for r in rentals),
                    return_rates=tuple(float(r) for r in returns),
                    minutes_per_interval=30.0,
                    start_hour=0.0,
                ),
                lower=8,
                upper=45,
                baseline_docks=cap - bikes,
                baseline_bikes=bikes,
            )
        )
    dock_budget = sum(s.baseline_docks + s.baseline_bikes for s in stations)
    bike_budget = sum(s.baseline_bikes for s in stations)
    return InstanceSpec(tuple(stations), bike_budget, dock_budget, max_moves=max_moves)
