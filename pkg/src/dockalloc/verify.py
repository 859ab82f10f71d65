"""Self-contained verification suite behind the ``verify`` subcommand.

Each check pits the solver against an independent computation: exhaustive
enumeration, event-level simulation, or pinned reference instances.  The
report lists every check with details; any failed check is a violation.
"""

from __future__ import annotations

import numpy as np

from .allocator import optimize
from .errors import ValidationError
from .oracle import (
    brute_force_optimum,
    counterexample_fixtures,
    feasible_within_moves,
    random_finite_profile,
    random_instance,
    simulate_cost,
)
from .demand import PoissonProfile
from .posterior import censored_subsequence
from .scaling import PhasePlan, optimize_scaled
from .udf import check_multimodular, cost_table_from_finite, count_stockouts, daily_coster


def _rng(seed, stream) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def _check_exchange_trap() -> dict:
    spec, extras = counterexample_fixtures()["exchange_trap"]
    tables = spec.tables()
    failures = []
    stuck = extras["stuck"]
    stuck_objective = sum(
        t.cost(d, b) for t, d, b in zip(tables, stuck.empty_docks, stuck.bikes)
    )
    if stuck_objective != extras["stuck_objective"]:
        failures.append(f"stalled allocation costs {stuck_objective}, expected {extras['stuck_objective']}")
    for neighbor in extras["exchange_neighbors"]:
        alloc = neighbor["allocation"]
        if sum(alloc.capacities) > spec.dock_budget:
            if neighbor["feasible"]:
                failures.append("neighbor marked feasible but breaks the dock budget")
            continue
        value = sum(t.cost(d, b) for t, d, b in zip(tables, alloc.empty_docks, alloc.bikes))
        if value < stuck_objective:
            failures.append(f"single exchange to {alloc} improves to {value}; descent should not stall")
    result = optimize(spec.constraints(), tables, improvement_threshold=0.0)
    if result.objective != extras["optimal_objective"]:
        failures.append(f"dock-move descent reached {result.objective}, expected {extras['optimal_objective']}")
    return {"name": "exchange_trap_fixture", "passed": not failures, "details": failures or "exact values reproduced"}


def _check_midpoint_gap() -> dict:
    spec, extras = counterexample_fixtures()["midpoint_gap"]
    failures = []
    z = spec.max_moves
    for caps in extras["feasible"]:
        if not feasible_within_moves(spec, caps, z):
            failures.append(f"{caps} should be reachable within {z} moves")
    for caps in extras["infeasible"]:
        if feasible_within_moves(spec, caps, z):
            failures.append(f"{caps} should NOT be reachable within {z} moves")
    return {"name": "midpoint_gap_fixture", "passed": not failures, "details": failures or "feasibility pattern holds"}


def _check_prefix_optimality(seed: int, instances: int) -> dict:
    failures = []
    checked = 0
    for case in range(instances):
        rng = _rng(seed, 1000 + case)
        spec = random_instance(rng)
        result = optimize(spec.constraints(), spec.tables(), improvement_threshold=0.0)
        exact = brute_force_optimum(spec)
        objectives = {0: result.initial_objective}
        running = objectives[0]
        for entry in result.log:
            running += entry.move.delta
            objectives[entry.iteration] = running
        for z, (_, best) in exact.items():
            mine = objectives.get(min(z, len(result.log)), result.objective)
            checked += 1
            if mine != best:
                failures.append(f"case {case}: {z} moves gives {mine}, enumeration gives {best}")
    return {
        "name": "prefix_optimality_vs_enumeration",
        "passed": not failures,
        "details": failures or f"{checked} (instance, move-cap) pairs match exactly",
    }


def _check_solver_agreement(seed: int, instances: int) -> dict:
    failures = []
    for case in range(instances):
        rng = _rng(seed, 2000 + case)
        spec = random_instance(rng)
        greedy = optimize(spec.constraints(), spec.tables(), improvement_threshold=0.0)
        for plan in (PhasePlan.powers_of_two(spec.dock_budget), PhasePlan.hybrid()):
            scaled = optimize_scaled(spec.constraints(), spec.tables(), plan, improvement_threshold=0.0)
            if scaled.objective != greedy.objective:
                failures.append(
                    f"case {case} plan {plan.step_sizes}: {scaled.objective} != greedy {greedy.objective}"
                )
    return {
        "name": "scaled_solvers_match_greedy",
        "passed": not failures,
        "details": failures or f"{instances} instances agree across plans",
    }


def _check_multimodularity(seed: int, instances: int) -> dict:
    failures = []
    for case in range(instances):
        rng = _rng(seed, 3000 + case)
        profile = random_finite_profile(rng, max_atoms=4, max_len=6)
        table = cost_table_from_finite(profile, capacity=int(rng.integers(2, 8)))
        violations = check_multimodular(table)
        if violations:
            failures.append(f"finite case {case}: {violations[0]}")
    for case in range(max(3, instances // 5)):
        rng = _rng(seed, 3500 + case)
        profile = PoissonProfile(
            station_id=f"p{case}",
            rental_rates=tuple(float(r) for r in rng.uniform(0, 0.3, 4)),
            return_rates=tuple(float(r) for r in rng.uniform(0, 0.3, 4)),
            minutes_per_interval=30.0,
        )
        table = daily_coster(profile).materialize(int(rng.integers(3, 12)))
        violations = check_multimodular(table)
        if violations:
            failures.append(f"poisson case {case}: {violations[0]}")
    return {"name": "tabulated_costs_multimodular", "passed": not failures, "details": failures or "no violations"}


def _check_simulation_agreement(seed: int, cases: int, trials: int) -> dict:
    failures = []
    for case in range(cases):
        rng = _rng(seed, 4000 + case)
        intervals = int(rng.integers(1, 5))
        profile = PoissonProfile(
            station_id=f"sim{case}",
            rental_rates=tuple(float(r) for r in rng.uniform(0, 0.25, intervals)),
            return_rates=tuple(float(r) for r in rng.uniform(0, 0.25, intervals)),
            minutes_per_interval=30.0,
        )
        cap = int(rng.integers(0, 11))
        b = int(rng.integers(0, cap + 1))
        d = cap - b
        analytic = daily_coster(profile).cost(d, b)
        mean, stderr = simulate_cost(profile, d, b, trials, seed=seed + case)
        if abs(analytic - mean) > 3 * stderr + 1e-9:
            failures.append(f"case {case}: analytic {analytic:.5f} vs simulated {mean:.5f} +/- {stderr:.5f}")
    return {
        "name": "transient_analysis_vs_simulation",
        "passed": not failures,
        "details": failures or f"{cases} cases within 3 standard errors",
    }


def _check_censoring_identity(seed: int, samples: int) -> dict:
    rng = _rng(seed, 5000)
    failures = 0
    for _ in range(samples):
        length = int(rng.integers(0, 15))
        events = tuple(int(x) for x in rng.choice([-1, 1], size=length))
        d = int(rng.integers(0, 5))
        b = int(rng.integers(0, 5))
        d2 = int(rng.integers(0, d + 1))
        b2 = int(rng.integers(0, b + 1))
        lhs = count_stockouts(events, d2, b2)[0] - count_stockouts(events, d, b)[0]
        rhs = count_stockouts(censored_subsequence(events, d, b), d2, b2)[0]
        if lhs != rhs:
            failures += 1
    return {
        "name": "censored_replay_identity",
        "passed": failures == 0,
        "details": f"{failures} mismatches over {samples} random draws",
    }


def run_verification(seed: int = 0, instances: int = 25, trials: int = 20000) -> dict:
    if instances < 1 or trials < 1:
        raise ValidationError("instances and trials must be positive")
    checks = [
        _check_exchange_trap(),
        _check_midpoint_gap(),
        _check_prefix_optimality(seed, instances),
        _check_solver_agreement(seed, max(5, instances // 3)),
        _check_multimodularity(seed, instances),
        _check_simulation_agreement(seed, cases=max(5, instances // 3), trials=trials),
        _check_censoring_identity(seed, samples=2000),
    ]
    return {
        "seed": seed,
        "rng": "philox",
        "checks": checks,
        "violations": sum(0 if c["passed"] else 1 for c in checks),
    }
