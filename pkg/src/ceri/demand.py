"""Individual demand at linear prices under a random budget.

At fixed prices an agent's choice is a step function of the realised budget:
walking down the ranking, a bundle is chosen exactly on the budgets that
afford it but none of the better bundles.  :func:`demand_profile` materialises
that step function; everything else integrates a budget distribution over it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import AgentPreference, BudgetDistribution, Bundle, Lottery, as_prices, empty_bundle
from .errors import PointMassOnThreshold

# Costs closer than this are treated as equal when building segments.
COST_TOL = 1e-12


@dataclass(frozen=True)
class Segment:
    lo: float
    hi: float
    bundle: Bundle

    def contains(self, b: float) -> bool:
        return self.lo <= b < self.hi


@dataclass(frozen=True)
class DemandProfile:
    """Half-open budget intervals partitioning ``[0, inf)``, cheapest first."""

    segments: tuple[Segment, ...]

    def lookup(self, budget: float) -> Bundle:
        for seg in reversed(self.segments):
            if budget >= seg.lo:
                return seg.bundle
        return self.segments[0].bundle

    def segments_for(self, x: Bundle) -> list[Segment]:
        return [s for s in self.segments if s.bundle == tuple(x)]

    def thresholds(self) -> list[float]:
        return [s.lo for s in self.segments[1:]]


def bundle_cost(p, x: Bundle) -> float:
    return float(np.dot(as_prices(p), x))


def optimal_bundle(agent: AgentPreference, p, budget: float) -> Bundle:
    """Best acceptable bundle with cost at most ``budget`` (weak inequality)."""
    prices = as_prices(p)
    for x in agent.ranked:
        if float(np.dot(prices, x)) <= budget:
            return x
    return empty_bundle(len(prices))


def demand_profile(agent: AgentPreference, p) -> DemandProfile:
    prices = as_prices(p)
    m = len(prices)
    reversed_segments: list[Segment] = []
    ceiling = math.inf
    for x in agent.ranked:
        cost = float(np.dot(prices, x))
        if cost < ceiling - COST_TOL:
            reversed_segments.append(Segment(cost, ceiling, x))
            ceiling = cost
    if ceiling > COST_TOL:
        reversed_segments.append(Segment(0.0, ceiling, empty_bundle(m)))
    segments = reversed_segments[::-1]
    first = segments[0]
    if first.lo != 0.0:
        segments[0] = Segment(0.0, first.hi, first.bundle)
    return DemandProfile(tuple(segments))


def bundle_probabilities(
    agent: AgentPreference,
    p,
    b: BudgetDistribution,
    *,
    on_threshold: str = "afford",
) -> Lottery:
    """Distribution of the agent's demanded bundle when the budget is drawn from ``b``.

    A budget exactly equal to a bundle's cost affords it.  With
    ``on_threshold="raise"`` a point mass sitting on a demand threshold is an
    error instead, for callers that want to avoid relying on that convention.
    """
    profile = demand_profile(agent, p)
    if on_threshold == "raise":
        cuts = profile.thresholds()
        for value, _ in b.atoms():
            if any(abs(value - t) <= COST_TOL for t in cuts):
                raise PointMassOnThreshold(f"budget point mass at {value} sits on a demand threshold")
    elif on_threshold != "afford":
        raise ValueError(f"unknown on_threshold policy {on_threshold!r}")
    masses: dict[Bundle, float] = {}
    for seg in profile.segments:
        w = b.interval_mass(seg.lo, seg.hi)
        if w > 0:
            masses[seg.bundle] = masses.get(seg.bundle, 0.0) + w
    return Lottery(masses)


def expected_demand(agent: AgentPreference, p, b: BudgetDistribution, **kwargs) -> np.ndarray:
    m = len(as_prices(p))
    return bundle_probabilities(agent, p, b, **kwargs).expectation(m)


def expected_demand_jacobian(agent: AgentPreference, p, b: BudgetDistribution) -> np.ndarray:
    """``d E[x] / d p`` for the continuous part of ``b`` (an ``m x m`` matrix).

    Each segment's mass is ``F(p·y) - F(p·x)`` where ``y`` is the bundle on
    the next segment up, so its gradient is ``f(p·y) y - f(p·x) x``.
    Point masses contribute nothing (their effect is a jump, not a slope).
    """
    prices = as_prices(p)
    m = len(prices)
    segments = demand_profile(agent, prices).segments
    jac = np.zeros((m, m))
    for k, seg in enumerate(segments):
        x = np.asarray(seg.bundle, dtype=float)
        if not x.any():
            continue
        grad = np.zeros(m)
        if k > 0:
            grad -= b.density(seg.lo) * x
        if k + 1 < len(segments):
            grad += b.density(seg.hi) * np.asarray(segments[k + 1].bundle, dtype=float)
        jac += np.outer(x, grad)
    return jac
