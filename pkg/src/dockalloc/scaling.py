"""Scaled variants of the descent: move docks in large strides first.

A phase with stride ``a`` only considers moves of ``a`` docks (and ``a``
bikes) at a time; the cost grid restricted to an ``a``-spaced lattice keeps
the second-difference structure, so each phase is the plain descent on a
coarser problem.  Halving the stride phase by phase reaches the exact
optimum in far fewer iterations than the unit-stride descent when budgets
are large, and stopping before stride 1 yields allocations that move docks
only in multiples of the last stride (useful when docks come in banks of
four).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .allocator import (
    Allocation,
    Constraints,
    DockMove,
    LogEntry,
    _Descent,
    _extended_problem,
    _run_additions,
    bike_optimal,
    dock_move_distance,
    DEFAULT_IMPROVEMENT_THRESHOLD,
)
from .errors import ValidationError
from .udf import CostSource, Number

# Projection allowance multiplier between constrained phases: the distance
# between consecutive phase optima is bounded by a cubic polynomial of the
# station count, so pulling the incumbent this far toward the baseline never
# skips past the next optimum.
PROJECTION_FACTOR = 8


@dataclass(frozen=True)
class PhasePlan:
    """Descending stride sizes, one per phase."""

    step_sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.step_sizes:
            raise ValidationError("a phase plan needs at least one stride")
        if any(int(s) != s or s < 1 for s in self.step_sizes):
            raise ValidationError(f"strides must be positive integers, got {self.step_sizes}")
        if any(a <= b for a, b in zip(self.step_sizes, self.step_sizes[1:])):
            raise ValidationError(f"strides must be strictly decreasing, got {self.step_sizes}")

    @classmethod
    def powers_of_two(cls, budget: int) -> "PhasePlan":
        """Strides 2^k, 2^(k-1), ..., 1 with 2^k the largest power not
        exceeding the dock budget."""
        if budget < 1:
            return cls((1,))
        top = 1
        while top * 2 <= budget:
            top *= 2
        sizes = []
        while top >= 1:
            sizes.append(top)
            top //= 2
        return cls(tuple(sizes))

    @classmethod
    def hybrid(cls) -> "PhasePlan":
        """The 8/4/1 plan; skips the intermediate powers of two, which pays
        off on realistic demand data."""
        return cls((8, 4, 1))

    def truncate(self, granularity: int) -> "PhasePlan":
        """Drop strides below ``granularity`` so docks move in multiples of
        it; the final allocation then respects physical dock-bank sizes."""
        if granularity < 1:
            raise ValidationError(f"granularity must be >= 1, got {granularity}")
        kept = tuple(s for s in self.step_sizes if s >= granularity)
        if not kept:
            kept = (granularity,)
        return PhasePlan(kept)


@dataclass(frozen=True)
class PhaseStats:
    step: int
    iterations: int
    bike_moves: int
    evaluations_by_capacity: dict[int, int]


@dataclass(frozen=True)
class ScaledResult:
    allocation: Allocation
    objective: Number
    initial_objective: Number
    log: tuple[LogEntry, ...]
    station_costs: tuple[Number, ...]
    depot_bikes: int
    deployed_docks: int
    phases: tuple[PhaseStats, ...]


def _real_distance(docks, bikes, baseline_caps, n_real: int) -> int:
    caps = [docks[s] + bikes[s] for s in range(n_real)]
    return dock_move_distance(caps, baseline_caps[:n_real])


def _project_toward_baseline(docks, bikes, baseline_caps, n_real: int, depot: int, allowance: int) -> None:
    """Pull station capacities toward the baseline, at most ``allowance``
    docks per station, transferring in matched pairs so the total is
    conserved.  Bikes stranded by a shrunken station park at the depot."""
    budget = [allowance] * n_real
    while True:
        above = next(
            (s for s in range(n_real) if budget[s] > 0 and docks[s] + bikes[s] > baseline_caps[s]),
            None,
        )
        below = next(
            (s for s in range(n_real) if budget[s] > 0 and docks[s] + bikes[s] < baseline_caps[s]),
            None,
        )
        if above is None or below is None:
            return
        gap_a = docks[above] + bikes[above] - baseline_caps[above]
        gap_b = baseline_caps[below] - docks[below] - bikes[below]
        amount = min(gap_a, gap_b, budget[above], budget[below])
        docks[above] -= amount
        if docks[above] < 0:  # station held bikes in the removed docks
            overflow = -docks[above]
            docks[above] = 0
            bikes[above] -= overflow
            bikes[depot] += overflow
            docks[depot] -= overflow
        docks[below] += amount
        budget[above] -= amount
        budget[below] -= amount


def _rebuild_bikes(sources, docks, bikes, tally) -> None:
    """Exact bike re-optimization: take every bike out, add back greedily."""
    caps = [d + b for d, b in zip(docks, bikes)]
    total_bikes = sum(bikes)
    tables = sources
    if tally is not None:
        from .udf import CountingSource

        tables = [CountingSource(t, tally) for t in sources]
    alloc = bike_optimal(caps, total_bikes, tables)
    docks[:] = list(alloc.empty_docks)
    bikes[:] = list(alloc.bikes)


def _cascade(
    sources,
    lower,
    upper,
    baseline_caps,
    start_docks,
    start_bikes,
    plan: PhasePlan,
    max_moves: int | None,
    threshold: float,
):
    """Run the full phase sequence; returns final state, log and stats."""
    n = len(sources)
    depot = n - 1
    docks = list(start_docks)
    bikes = list(start_bikes)
    log: list[tuple[DockMove, Number]] = []
    phases: list[PhaseStats] = []
    for step in plan.step_sizes:
        tally: dict[int, int] = {}
        if max_moves is not None:
            _project_toward_baseline(docks, bikes, baseline_caps, n - 1, depot, PROJECTION_FACTOR * n**3 * step)
        if step == 1:
            _rebuild_bikes(sources, docks, bikes, tally)
            bike_moves = sum(bikes)
        else:
            pre = _Descent(sources, lower, upper, docks, bikes, stride=step, threshold=threshold, eval_tally=tally)
            bike_moves = pre.optimize_bikes_pairwise()
            docks, bikes = list(pre.d), list(pre.b)
        engine = _Descent(sources, lower, upper, docks, bikes, stride=step, threshold=threshold, eval_tally=tally)
        if max_moves is None:
            budget = None
        else:
            slack = 2 * max_moves - _real_distance(docks, bikes, baseline_caps, n - 1)
            budget = max(slack, 0) // (2 * step)
        moves = engine.run(max_iterations=budget)
        docks, bikes = list(engine.d), list(engine.b)
        log.extend(moves)
        phases.append(
            PhaseStats(
                step=step,
                iterations=len(moves),
                bike_moves=bike_moves,
                evaluations_by_capacity=dict(sorted(tally.items())),
            )
        )
    return docks, bikes, log, phases


def _scaled_result(n, sources, docks, bikes, start_objective, moves, phases, deployed) -> ScaledResult:
    station_costs = tuple(sources[s].cost(docks[s], bikes[s]) for s in range(n))
    objective = sum(station_costs)
    log = [LogEntry(it, move, value) for it, (move, value) in enumerate(moves, start=1)]
    return ScaledResult(
        allocation=Allocation(tuple(docks[:n]), tuple(bikes[:n])),
        objective=objective,
        initial_objective=start_objective,
        log=tuple(log),
        station_costs=station_costs,
        depot_bikes=bikes[n],
        deployed_docks=deployed,
        phases=tuple(phases),
    )


def optimize_scaled(
    constraints: Constraints,
    tables: Sequence[CostSource],
    plan: PhasePlan | None = None,
    *,
    improvement_threshold: float = DEFAULT_IMPROVEMENT_THRESHOLD,
) -> ScaledResult:
    """Phase-scaled descent without a moved-dock cap.

    Ends at the same objective as the unit-stride descent whenever the plan
    finishes at stride 1.  A finite ``constraints.max_moves`` delegates to
    ``optimize_scaled_constrained``.
    """
    if constraints.max_moves is not None:
        return optimize_scaled_constrained(
            constraints, tables, plan, improvement_threshold=improvement_threshold
        )
    n = len(tables)
    sources, lower, upper, caps = _extended_problem(constraints, tables)
    plan = plan or PhasePlan.powers_of_two(constraints.dock_budget)

    docks = [c - b for c, b in zip(caps, list(constraints.baseline_bikes) + [0])]
    bikes = list(constraints.baseline_bikes) + [constraints.bike_budget - sum(constraints.baseline_bikes)]
    docks[n] = caps[n] - bikes[n]
    start_objective = sum(sources[s].cost(docks[s], bikes[s]) for s in range(n))

    docks, bikes, moves, phases = _cascade(
        sources, lower, upper, caps, docks, bikes, plan, None, improvement_threshold
    )

    extra = constraints.dock_budget - sum(constraints.baseline_capacities)
    deploy_cap = min(extra, sum(constraints.upper) - sum(constraints.baseline_capacities))
    additions: list[tuple[DockMove, Number]] = []
    if deploy_cap > 0:
        additions, engine = _run_additions(
            sources, lower, upper, docks, bikes, deploy_cap,
            threshold=improvement_threshold, eval_tally=None,
        )
        docks, bikes = list(engine.d), list(engine.b)
    return _scaled_result(n, sources, docks, bikes, start_objective, moves + additions, phases, len(additions))


def optimize_scaled_constrained(
    constraints: Constraints,
    tables: Sequence[CostSource],
    plan: PhasePlan | None = None,
    *,
    improvement_threshold: float = DEFAULT_IMPROVEMENT_THRESHOLD,
) -> ScaledResult:
    """Phase-scaled descent under a finite moved-dock cap.

    Between phases the incumbent is pulled back toward the baseline far
    enough that the next, finer phase can reach its optimum within the
    remaining budget; each phase then runs with an iteration cap that keeps
    the final allocation inside the allowed ball around the baseline.
    """
    z = constraints.max_moves
    if z is None:
        return optimize_scaled(constraints, tables, plan, improvement_threshold=improvement_threshold)
    n = len(tables)
    sources, lower, upper, caps = _extended_problem(constraints, tables)
    plan = plan or PhasePlan.powers_of_two(constraints.dock_budget)

    base_docks = [c - b for c, b in zip(caps, list(constraints.baseline_bikes) + [0])]
    base_bikes = list(constraints.baseline_bikes) + [constraints.bike_budget - sum(constraints.baseline_bikes)]
    base_docks[n] = caps[n] - base_bikes[n]
    start_objective = sum(sources[s].cost(base_docks[s], base_bikes[s]) for s in range(n))

    extra = constraints.dock_budget - sum(constraints.baseline_capacities)
    deploy_cap = min(extra, sum(constraints.upper) - sum(constraints.baseline_capacities), 2 * z)

    best = None
    for deployed in range(deploy_cap + 1):
        budget = z - (deployed + 1) // 2
        if budget < 0:
            break
        docks, bikes, moves, phases = _cascade(
            sources, lower, upper, caps, base_docks, base_bikes, plan, budget, improvement_threshold
        )
        additions: list[tuple[DockMove, Number]] = []
        if deployed:
            additions, engine = _run_additions(
                sources, lower, upper, docks, bikes, deployed,
                threshold=improvement_threshold, eval_tally=None,
            )
            docks, bikes = list(engine.d), list(engine.b)
        objective = sum(sources[s].cost(docks[s], bikes[s]) for s in range(n))
        if best is None or objective < best[0]:
            best = (objective, docks, bikes, moves + additions, phases, len(additions))
    _, docks, bikes, moves, phases, deployed = best
    return _scaled_result(n, sources, docks, bikes, start_objective, moves, phases, deployed)
