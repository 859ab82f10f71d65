"""Station cost functions: expected out-of-stock events over a horizon.

A station starts the day with ``d`` open docks and ``b`` bikes.  Customers
arrive one at a time to rent (-1) or return (+1) a bike; an arrival that
cannot be served leaves the state unchanged and counts as one out-of-stock
event.  The cost of a demand description is the expected number of such
events as a function of (d, b).  Three demand descriptions are supported:

* a single explicit arrival sequence,
* a finite distribution over sequences (probabilities may be ``Fraction``
  for exact arithmetic; missing mass is the empty sequence),
* piecewise-constant Poisson rental/return rates over day intervals.

Costs on the (d, b) grid satisfy a set of second-difference inequalities
(multimodularity) that the solver relies on; ``check_multimodular`` verifies
them for any tabulated cost.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, reduce
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .demand import PoissonProfile
from .errors import CapacityLimitError, ValidationError

Number = int | float | Fraction

DEFAULT_CAPACITY_LIMIT = 512
JUMP_TAIL_TOL = 1e-10
MULTIMODULAR_TOL = 1e-9
PROBABILITY_SLACK = 1e-12


@dataclass(frozen=True)
class SequenceState:
    """Station state after a run of arrivals."""

    open_docks: int
    bikes: int
    stockouts: int


def count_stockouts(events: Sequence[int], d: int, b: int) -> tuple[int, SequenceState]:
    """Feed ``events`` (+1 return, -1 rental) through a station starting with
    ``d`` open docks and ``b`` bikes; return the out-of-stock count and the
    final state.  Total function: any sequence and any non-negative start is
    valid, and open_docks + bikes stays constant throughout."""
    if d < 0 or b < 0:
        raise ValidationError(f"negative start state d={d}, b={b}")
    docks, bikes, misses = d, b, 0
    for x in events:
        if x == 1:
            if docks == 0:
                misses += 1
            else:
                docks -= 1
                bikes += 1
        elif x == -1:
            if bikes == 0:
                misses += 1
            else:
                bikes -= 1
                docks += 1
        else:
            raise ValidationError(f"arrival events must be +1 or -1, got {x!r}")
    return misses, SequenceState(docks, bikes, misses)


@dataclass(frozen=True)
class FiniteProfile:
    """Finite distribution over arrival sequences.

    ``atoms`` maps sequences to probabilities summing to at most 1; the
    residual mass stands for the empty sequence (zero cost).
    """

    atoms: tuple[tuple[tuple[int, ...], Number], ...]

    def validate(self) -> None:
        total = 0
        for events, p in self.atoms:
            if p < 0:
                raise ValidationError(f"atom probability {p} is negative")
            for x in events:
                if x not in (1, -1):
                    raise ValidationError(f"arrival events must be +1 or -1, got {x!r}")
            total += p
        if total > 1 + PROBABILITY_SLACK:
            raise ValidationError(f"atom probabilities sum to {total}, exceeding 1")

    @property
    def residual(self) -> Number:
        return 1 - sum(p for _, p in self.atoms)


def expected_cost_finite(profile: FiniteProfile, d: int, b: int) -> Number:
    """Probability-weighted stockout count over the profile's sequences.

    Exact when the probabilities are ``Fraction``s (the per-sequence counts
    are integers)."""
    profile.validate()
    total = 0
    for events, p in profile.atoms:
        if p == 0:
            continue
        total += p * count_stockouts(events, d, b)[0]
    return total


class CostSource(Protocol):
    """Anything that prices a station state; the solver only needs this."""

    station_id: str

    def cost(self, d: int, b: int) -> Number: ...


@dataclass(frozen=True)
class ZeroCost:
    """Free station; used internally for the budget-slack depot."""

    station_id: str = "depot"

    def cost(self, d: int, b: int) -> Number:
        return 0


@dataclass(frozen=True)
class IntervalResult:
    """Transient analysis of one constant-rate interval.

    ``transition[x, y]`` is the probability of ending the interval with y
    bikes after starting with x; ``expected_events[x]`` the expected number
    of failed arrivals over the interval starting from x.
    """

    transition: np.ndarray
    expected_events: np.ndarray


def interval_cost_poisson(rental_rate: float, return_rate: float, minutes: float, capacity: int) -> IntervalResult:
    """Analyze the bike count as a birth-death process on {0..capacity}
    (births = returns at rate ``return_rate``, deaths = rentals at
    ``rental_rate``, both per minute) via uniformization.

    Failed arrivals occur at rate ``return_rate`` while full and
    ``rental_rate`` while empty; their time integral is accumulated inside
    the uniformization sum, so the only tolerance is the Poisson jump-count
    tail cut at ``JUMP_TAIL_TOL``.
    """
    for name, r in (("rental_rate", rental_rate), ("return_rate", return_rate)):
        if not (math.isfinite(r) and r >= 0):
            raise ValidationError(f"{name} must be finite and non-negative, got {r}")
    if not (math.isfinite(minutes) and minutes > 0):
        raise ValidationError(f"interval length must be positive, got {minutes}")
    if capacity < 0:
        raise ValidationError(f"capacity must be non-negative, got {capacity}")

    m = capacity + 1
    rate = rental_rate + return_rate
    if rate == 0:
        return IntervalResult(np.eye(m), np.zeros(m))

    jump_mean = rate * minutes
    if jump_mean > 1e5:
        raise ValidationError(f"interval has {jump_mean:.3g} expected arrivals; rates are implausibly large")

    # Uniformized jump chain: attempts that cannot be served self-loop.
    step = np.zeros((m, m))
    p_up = return_rate / rate
    p_down = rental_rate / rate
    for y in range(m):
        step[y, y + 1 if y < capacity else y] += p_up
        step[y, y - 1 if y > 0 else y] += p_down

    # Failure rate by state: returns fail at full, rentals fail at empty.
    boundary = np.zeros(m)
    boundary[0] += rental_rate
    boundary[capacity] += return_rate

    transition = np.zeros((m, m))
    occupancy = np.zeros((m, m))  # integral over the interval of the state distribution
    power = np.eye(m)
    log_pmf = -jump_mean  # log Poisson pmf at k jumps
    cdf = math.exp(log_pmf)
    transition += math.exp(log_pmf) * power
    occupancy += ((1.0 - cdf) / rate) * power
    k = 0
    while 1.0 - cdf > JUMP_TAIL_TOL:
        k += 1
        power = power @ step
        log_pmf += math.log(jump_mean) - math.log(k)
        pmf = math.exp(log_pmf)
        cdf += pmf
        transition += pmf * power
        occupancy += ((1.0 - cdf) / rate) * power

    transition /= transition.sum(axis=1, keepdims=True)
    return IntervalResult(transition, occupancy @ boundary)


class LazyDailyCost:
    """Day-long cost of a Poisson profile, tabulated per capacity on demand.

    Interval results are chained across the day: the expected events from a
    start state accumulate backward through each interval's transition
    matrix.  Each total capacity has its own chain; capacities are computed
    lazily and cached since optimization runs touch few of them.
    """

    def __init__(self, profile: PoissonProfile, capacity_limit: int = DEFAULT_CAPACITY_LIMIT):
        profile.validate()
        self.profile = profile
        self.station_id = profile.station_id
        self.capacity_limit = capacity_limit
        self._day_cost: dict[int, np.ndarray] = {}
        self._day_transition: dict[int, np.ndarray] = {}

    def _intervals(self, capacity: int) -> list[IntervalResult]:
        p = self.profile
        out = []
        for mu, lam in zip(p.rental_rates, p.return_rates):
            if mu == 0 and lam == 0:
                out.append(IntervalResult(np.eye(capacity + 1), np.zeros(capacity + 1)))
            else:
                out.append(interval_cost_poisson(mu, lam, p.minutes_per_interval, capacity))
        return out

    def _build(self, capacity: int) -> None:
        if capacity > self.capacity_limit:
            raise CapacityLimitError(
                f"station {self.station_id!r}: capacity {capacity} exceeds the limit {self.capacity_limit}"
            )
        results = self._intervals(capacity)
        v = np.zeros(capacity + 1)
        for r in reversed(results):
            v = r.expected_events + r.transition @ v
        self._day_cost[capacity] = v
        self._day_transition[capacity] = reduce(lambda a, r: a @ r.transition, results, np.eye(capacity + 1))

    def cost_vector(self, capacity: int) -> np.ndarray:
        """Expected daily events indexed by the number of bikes at open."""
        if capacity not in self._day_cost:
            self._build(capacity)
        return self._day_cost[capacity]

    def day_transition(self, capacity: int) -> np.ndarray:
        """End-of-day bike-count distribution per start count."""
        if capacity not in self._day_transition:
            self._build(capacity)
        return self._day_transition[capacity]

    def cost(self, d: int, b: int) -> float:
        if d < 0 or b < 0:
            raise ValidationError(f"negative state d={d}, b={b}")
        return float(self.cost_vector(d + b)[b])

    def materialize(self, capacity: int, provenance: str = "poisson") -> "CostTable":
        values = tuple(tuple(float(x) for x in self.cost_vector(s)) for s in range(capacity + 1))
        return CostTable(self.station_id, capacity, values, provenance)


@lru_cache(maxsize=None)
def daily_coster(profile: PoissonProfile, capacity_limit: int = DEFAULT_CAPACITY_LIMIT) -> LazyDailyCost:
    """Shared per-profile cache so cost tables and day chains are built once."""
    return LazyDailyCost(profile, capacity_limit)


def daily_cost_poisson(profile: PoissonProfile, capacity: int, capacity_limit: int = DEFAULT_CAPACITY_LIMIT) -> "CostTable":
    """Tabulate the day-long expected events for every split d + b <= capacity."""
    return daily_coster(profile, capacity_limit).materialize(capacity)


@dataclass(frozen=True)
class CostTable:
    """Tabulated station cost for every d + b <= max_capacity.

    ``values[s][b]`` is the cost with ``b`` bikes and ``s - b`` open docks,
    i.e. rows are anti-diagonals of the (d, b) grid grouped by total
    capacity.  Values may be floats or ``Fraction``s.
    """

    station_id: str
    max_capacity: int
    values: tuple[tuple[Number, ...], ...]
    provenance: str = "finite"

    def validate(self) -> None:
        if len(self.values) != self.max_capacity + 1:
            raise ValidationError(f"table {self.station_id!r}: expected {self.max_capacity + 1} rows")
        for s, row in enumerate(self.values):
            if len(row) != s + 1:
                raise ValidationError(f"table {self.station_id!r}: row {s} has {len(row)} entries, expected {s + 1}")
            for v in row:
                if v < 0:
                    raise ValidationError(f"table {self.station_id!r}: negative cost {v}")

    def cost(self, d: int, b: int) -> Number:
        if d < 0 or b < 0:
            raise ValidationError(f"negative state d={d}, b={b}")
        s = d + b
        if s > self.max_capacity:
            raise CapacityLimitError(f"table {self.station_id!r} covers capacity {self.max_capacity}, asked for {s}")
        return self.values[s][b]

    def marginal(self, d: int, b: int, dd: int, db: int) -> Number:
        """Cost change of moving from (d, b) to (d + dd, b + db)."""
        return self.cost(d + dd, b + db) - self.cost(d, b)

    def to_json(self) -> dict:
        return {
            "station_id": self.station_id,
            "max_capacity": self.max_capacity,
            "provenance": self.provenance,
            "values": [[_num_to_json(v) for v in row] for row in self.values],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CostTable":
        try:
            table = cls(
                station_id=str(doc["station_id"]),
                max_capacity=int(doc["max_capacity"]),
                values=tuple(tuple(_num_from_json(v) for v in row) for row in doc["values"]),
                provenance=str(doc.get("provenance", "finite")),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed cost table document: {exc}") from exc
        table.validate()
        return table


def _num_to_json(v: Number):
    if isinstance(v, Fraction):
        return str(v)
    return float(v)


def _num_from_json(v) -> Number:
    if isinstance(v, str):
        return Fraction(v)
    return float(v)


def save_cost_table(path: str | Path, table: CostTable) -> None:
    Path(path).write_text(json.dumps(table.to_json(), indent=2, sort_keys=True))


def load_cost_table(path: str | Path) -> CostTable:
    return CostTable.from_json(json.loads(Path(path).read_text()))


def cost_table_from_finite(
    profile: FiniteProfile, capacity: int, station_id: str = "", provenance: str = "finite"
) -> CostTable:
    """Tabulate a finite profile exactly over the capacity triangle."""
    profile.validate()
    values = []
    for s in range(capacity + 1):
        row = []
        for b in range(s + 1):
            row.append(expected_cost_finite(profile, s - b, b))
        values.append(tuple(row))
    return CostTable(station_id, capacity, tuple(values), provenance)


@dataclass(frozen=True)
class Violation:
    """One failed second-difference inequality at a grid point."""

    inequality: int
    d: int
    b: int
    amount: float  # positive slack that is missing

    def __str__(self) -> str:
        return f"inequality ({self.inequality}) fails at d={self.d}, b={self.b} by {self.amount:.3g}"


def check_multimodular(table: CostTable, tol: float = MULTIMODULAR_TOL) -> list[Violation]:
    """Evaluate the six second-difference inequalities at every grid point
    where all terms are defined; return the violations beyond ``tol``.

    Inequalities (1) and (6) are algebraically the same constraint and (4),
    (5) follow from the first three; all six are still reported separately
    so a failure names every broken form.
    """
    f = table.cost
    cap = table.max_capacity
    out: list[Violation] = []

    def record(ineq: int, d: int, b: int, lhs: Number, rhs: Number) -> None:
        gap = lhs - rhs
        if gap < -tol:
            out.append(Violation(ineq, d, b, float(-gap)))

    for d in range(cap + 1):
        for b in range(cap + 1 - d):
            if d + b + 2 <= cap:
                record(1, d, b, f(d + 1, b + 1) - f(d + 1, b), f(d, b + 1) - f(d, b))
                record(4, d, b, f(d + 2, b) - f(d + 1, b), f(d + 1, b) - f(d, b))
                record(5, d, b, f(d, b + 2) - f(d, b + 1), f(d, b + 1) - f(d, b))
                record(6, d, b, f(d + 1, b + 1) - f(d, b + 1), f(d + 1, b) - f(d, b))
            if d >= 1 and b >= 1:
                record(2, d, b, f(d - 1, b + 1) - f(d - 1, b), f(d, b) - f(d, b - 1))
                record(3, d, b, f(d + 1, b - 1) - f(d, b - 1), f(d, b) - f(d - 1, b))
    return out


class CountingSource:
    """Wrap a cost source and tally evaluations grouped by total capacity."""

    def __init__(self, inner: CostSource, tally: dict[int, int]):
        self.inner = inner
        self.station_id = getattr(inner, "station_id", "")
        self.tally = tally

    def cost(self, d: int, b: int) -> Number:
        self.tally[d + b] = self.tally.get(d + b, 0) + 1
        return self.inner.cost(d, b)
