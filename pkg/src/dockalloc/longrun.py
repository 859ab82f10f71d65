"""Long-run average station cost under the no-overnight-rebalancing regime.

With no rebalancing, the bike count at the start of a day is whatever the
previous day left behind.  Day-to-day bike counts form a Markov chain; the
long-run average cost of a station is the single-day cost averaged over that
chain's stationary distribution.  It depends only on the station's total
capacity, never on how the capacity is split on any particular morning.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand import PoissonProfile
from .errors import ValidationError
from .udf import (
    CostTable,
    FiniteProfile,
    Number,
    count_stockouts,
    daily_coster,
    expected_cost_finite,
    DEFAULT_CAPACITY_LIMIT,
)

ROW_SUM_TOL = 1e-9
RANK_TOL = 1e-10
FIXED_POINT_TOL = 1e-8
DAMPING = 0.99


@dataclass(frozen=True)
class DayChain:
    """Day-to-day bike-count chain for one station capacity."""

    rho: np.ndarray  # rho[x, y] = P(end day with y bikes | start with x)
    pi: np.ndarray  # stationary distribution over bike counts
    ergodic: bool  # False when the stationary solve was degenerate


Profile = PoissonProfile | FiniteProfile


def day_transition(profile: Profile, capacity: int, capacity_limit: int = DEFAULT_CAPACITY_LIMIT) -> np.ndarray:
    """End-of-day bike-count distribution per start count.

    Poisson profiles chain the cached interval transition matrices; finite
    profiles simulate each atom directly (residual mass leaves the state
    unchanged).
    """
    if capacity < 0:
        raise ValidationError(f"capacity must be non-negative, got {capacity}")
    if isinstance(profile, PoissonProfile):
        return daily_coster(profile, capacity_limit).day_transition(capacity)
    profile.validate()
    m = capacity + 1
    rho = np.zeros((m, m))
    residual = float(profile.residual)
    for x in range(m):
        for events, p in profile.atoms:
            if p == 0:
                continue
            final = count_stockouts(events, capacity - x, x)[1]
            rho[x, final.bikes] += float(p)
        rho[x, x] += residual
    return rho


def stationary(rho: np.ndarray) -> tuple[np.ndarray, bool]:
    """Stationary distribution of a row-stochastic matrix.

    Solves the linear system directly when the solution is unique.  If the
    chain is degenerate (stationary distribution not unique), returns the
    fixed point of power iteration damped toward the uniform distribution
    and flags the result non-ergodic.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValidationError(f"transition matrix must be square, got shape {rho.shape}")
    if np.any(rho < -1e-12):
        raise ValidationError("transition matrix has negative entries")
    if np.any(np.abs(rho.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise ValidationError("transition matrix rows must sum to 1")

    m = rho.shape[0]
    if m == 1:
        return np.ones(1), True

    a = rho.T - np.eye(m)
    singular_values = np.linalg.svd(a, compute_uv=False)
    cutoff = max(1.0, singular_values[0]) * RANK_TOL
    nullity = int(np.sum(singular_values < cutoff))

    if nullity <= 1:
        system = np.vstack([a, np.ones((1, m))])
        rhs = np.zeros(m + 1)
        rhs[-1] = 1.0
        pi, *_ = np.linalg.lstsq(system, rhs, rcond=None)
        pi = np.clip(pi, 0.0, None)
        pi /= pi.sum()
        if np.max(np.abs(pi @ rho - pi)) <= FIXED_POINT_TOL:
            return pi, True

    # Degenerate chain: exact fixed point of pi <- DAMPING*pi@rho + (1-DAMPING)*uniform.
    uniform = np.full(m, 1.0 / m)
    pi = np.linalg.solve((np.eye(m) - DAMPING * rho).T, (1.0 - DAMPING) * uniform)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    return pi, False


def day_chain(profile: Profile, capacity: int, capacity_limit: int = DEFAULT_CAPACITY_LIMIT) -> DayChain:
    rho = day_transition(profile, capacity, capacity_limit)
    pi, ergodic = stationary(rho)
    return DayChain(rho, pi, ergodic)


def _daily_cost(profile: Profile, capacity: int, bikes: int, capacity_limit: int) -> Number:
    if isinstance(profile, PoissonProfile):
        return float(daily_coster(profile, capacity_limit).cost_vector(capacity)[bikes])
    return expected_cost_finite(profile, capacity - bikes, bikes)


def longrun_cost(profile: Profile, d: int, b: int, capacity_limit: int = DEFAULT_CAPACITY_LIMIT) -> float:
    """Average daily cost under the stationary day-start distribution for
    capacity d + b; the split between d and b is irrelevant."""
    if d < 0 or b < 0:
        raise ValidationError(f"negative state d={d}, b={b}")
    capacity = d + b
    chain = day_chain(profile, capacity, capacity_limit)
    return float(sum(chain.pi[k] * float(_daily_cost(profile, capacity, k, capacity_limit)) for k in range(capacity + 1)))


class LongrunCost:
    """Long-run average cost exposed through the same interface as the
    single-day tables, so the allocator runs unchanged on either objective."""

    def __init__(self, profile: Profile, capacity_limit: int = DEFAULT_CAPACITY_LIMIT):
        if isinstance(profile, PoissonProfile):
            profile.validate()
            self.station_id = profile.station_id
        else:
            profile.validate()
            self.station_id = ""
        self.profile = profile
        self.capacity_limit = capacity_limit
        self._by_capacity: dict[int, float] = {}
        self._chains: dict[int, DayChain] = {}

    def chain(self, capacity: int) -> DayChain:
        if capacity not in self._chains:
            self._chains[capacity] = day_chain(self.profile, capacity, self.capacity_limit)
        return self._chains[capacity]

    def cost(self, d: int, b: int) -> float:
        if d < 0 or b < 0:
            raise ValidationError(f"negative state d={d}, b={b}")
        capacity = d + b
        if capacity not in self._by_capacity:
            chain = self.chain(capacity)
            self._by_capacity[capacity] = float(
                sum(chain.pi[k] * float(_daily_cost(self.profile, capacity, k, self.capacity_limit)) for k in range(capacity + 1))
            )
        return self._by_capacity[capacity]

    def materialize(self, capacity: int) -> CostTable:
        values = tuple(tuple(self.cost(s - b, b) for b in range(s + 1)) for s in range(capacity + 1))
        return CostTable(self.station_id, capacity, values, provenance="longrun")
