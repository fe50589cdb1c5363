"""Certificates for lottery and deterministic allocations.

Ordinal efficiency is decided exactly.  A lottery allocation is ordinally
efficient iff there are prices ``p >= 0``, zero on goods with spare capacity,
such that every bundle an agent prefers to one it receives with positive
probability costs at least one unit more.  When no such prices exist, the
Farkas alternative is a set of probability shifts from worse to better
bundles that respects the fully allocated goods; scaled down to respect the
spare capacity of the rest, it is an explicit improvement.

The Farkas system ``{A^T lam <= 0, lam >= 0, sum(lam) > 0}`` has one row per
fully allocated good, so it is solved as the exact LP
``max sum(lam)`` s.t. ``A^T lam <= 0, sum(lam) <= 1`` and the prices are read
off its optimal duals when the optimum is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import _rational_lp
from .core import (
    AgentPreference,
    BudgetDistribution,
    Bundle,
    Economy,
    Lottery,
    LotteryAllocation,
    TOL,
    empty_bundle,
    remove_one,
)
from .decompose import ExPostImplementation
from .errors import LPFailure, NotCertified, TooLarge, UnknownBundle

# A good counts as fully allocated when expected use is within this of capacity.
ALLOCATION_TOL = 1e-6
SEARCH_LIMIT = 1_000_000


@dataclass(frozen=True)
class SdResult:
    dominates: bool
    strict: bool

    def __bool__(self) -> bool:
        return self.dominates


def _cumulative(agent: AgentPreference, lot: Lottery, m: int) -> list:
    order = agent.with_empty(m)
    for x in lot.support:
        if agent.rank(x) is None or len(x) != m:
            raise UnknownBundle(f"bundle {x} is not acceptable to agent {agent.name!r}")
    out, acc = [], 0
    for x in order:
        acc += lot.prob(x)
        out.append(acc)
    return out


def sd_dominates(agent: AgentPreference, x: Lottery, y: Lottery, *, tol: float = TOL) -> SdResult:
    """Does ``x`` first-order stochastically dominate ``y`` under ``agent``'s ranking?"""
    m = _bundle_length(x, y)
    cx = _cumulative(agent, x, m)
    cy = _cumulative(agent, y, m)
    diffs = [a - b for a, b in zip(cx, cy)]
    dominates = all(d >= -tol for d in diffs)
    strict = dominates and any(d > tol for d in diffs)
    return SdResult(dominates, strict)


def _bundle_length(*lots: Lottery) -> int:
    for lot in lots:
        for x in lot.support:
            return len(x)
    raise ValueError("lottery has empty support")


@dataclass(frozen=True)
class Shift:
    """Move ``mass`` of ``agent``'s probability from ``source`` to the better ``target``."""

    agent: int
    source: Bundle
    target: Bundle
    mass: Fraction


@dataclass(frozen=True)
class EfficiencyCertificate:
    efficient: bool
    prices: tuple[Fraction, ...] | None = None
    improvement: tuple[Shift, ...] = ()
    fully_allocated: tuple[bool, ...] = ()

    @property
    def verdict(self) -> str:
        return "EFFICIENT" if self.efficient else "INEFFICIENT"


@dataclass
class _PriceSystem:
    rows: list[tuple[int, Bundle, Bundle]]
    full: list[int]
    matrix: list[list[int]]
    mass: dict[tuple[int, Bundle], Fraction]
    slack: np.ndarray


def _support_masses(lot: Lottery, tol: float) -> dict[Bundle, Fraction]:
    return {x: Fraction(p) for x, p in lot.items() if float(p) > tol}


def _price_system(e: Economy, allocation: LotteryAllocation, alloc_tol: float, mass_tol: float) -> _PriceSystem:
    if len(allocation) != e.n:
        raise ValueError(f"allocation has {len(allocation)} lotteries for {e.n} agents")
    used = allocation.expected_aggregate(e.m)
    slack = e.capacity_array - used
    full = [j for j in range(e.m) if slack[j] <= alloc_tol]
    rows: list[tuple[int, Bundle, Bundle]] = []
    mass: dict[tuple[int, Bundle], Fraction] = {}
    for i, (agent, lot) in enumerate(zip(e.agents, allocation)):
        for x, q in _support_masses(lot, mass_tol).items():
            r = agent.rank(x)
            if r is None:
                raise UnknownBundle(f"agent {i}: bundle {x} is not acceptable")
            mass[(i, x)] = q
            for better in agent.ranked[:r]:
                rows.append((i, better, x))
    matrix = [[better[j] - x[j] for j in full] for _, better, x in rows]
    return _PriceSystem(rows, full, matrix, mass, slack)


def is_ordinally_efficient(
    e: Economy,
    allocation: LotteryAllocation,
    *,
    alloc_tol: float = ALLOCATION_TOL,
    mass_tol: float = TOL,
) -> EfficiencyCertificate:
    """Exact ordinal-efficiency verdict with a price or improvement certificate.

    Args:
        e: the economy.
        allocation: lotteries whose expected aggregate is within capacity.
        alloc_tol: a good whose expected use is within this of capacity is
            treated as fully allocated.
        mass_tol: bundles with probability at most this are treated as
            unsupported.

    Returns:
        ``EFFICIENT`` with prices satisfying the pricing conditions, or
        ``INEFFICIENT`` with probability shifts that keep the allocation
        feasible and make every agent weakly (one strictly) better off.
    """
    sys_ = _price_system(e, allocation, alloc_tol, mass_tol)
    flags = tuple(j in sys_.full for j in range(e.m))
    if not sys_.rows:
        return EfficiencyCertificate(True, tuple(Fraction(0) for _ in range(e.m)), (), flags)
    k = len(sys_.rows)
    # columns: one multiplier per row of the price system
    a = [[sys_.matrix[r][col] for r in range(k)] for col in range(len(sys_.full))]
    a.append([1] * k)
    b = [0] * len(sys_.full) + [1]
    res = _rational_lp.maximize([1] * k, a, b)
    if res.status != "optimal":
        raise LPFailure("multiplier LP reported unbounded")
    if res.value == 0:
        prices = [Fraction(0)] * e.m
        for col, j in enumerate(sys_.full):
            prices[j] = res.duals[col]
        return EfficiencyCertificate(True, tuple(prices), (), flags)
    return EfficiencyCertificate(False, None, _scale_shifts(e, sys_, res.x), flags)


def _scale_shifts(e: Economy, sys_: _PriceSystem, lam: Sequence[Fraction]) -> tuple[Shift, ...]:
    active = [(r, v) for r, v in enumerate(lam) if v > 0]
    out_of: dict[tuple[int, Bundle], Fraction] = {}
    net = [Fraction(0)] * e.m
    for r, v in active:
        i, better, x = sys_.rows[r]
        out_of[(i, x)] = out_of.get((i, x), Fraction(0)) + v
        for j in range(e.m):
            net[j] += v * (better[j] - x[j])
    theta: Fraction | None = None
    for key, v in out_of.items():
        cand = sys_.mass[key] / v
        theta = cand if theta is None else min(theta, cand)
    full = set(sys_.full)
    for j in range(e.m):
        if j not in full and net[j] > 0:
            cand = Fraction(float(sys_.slack[j])) / net[j]
            theta = min(theta, cand)
    assert theta is not None and theta > 0
    return tuple(Shift(sys_.rows[r][0], sys_.rows[r][2], sys_.rows[r][1], theta * v) for r, v in active)


def apply_shifts(allocation: LotteryAllocation, shifts: Sequence[Shift]) -> LotteryAllocation:
    """The allocation after moving each shift's mass from source to target."""
    per_agent = [dict(lot.masses) for lot in allocation]
    for s in shifts:
        masses = per_agent[s.agent]
        masses[s.source] = Fraction(masses.get(s.source, 0)) - s.mass
        masses[s.target] = Fraction(masses.get(s.target, 0)) + s.mass
    cleaned = []
    for masses in per_agent:
        cleaned.append(Lottery({x: (0 if abs(float(q)) <= 1e-15 else q) for x, q in masses.items()}))
    return LotteryAllocation(tuple(cleaned))


def check_certificate(
    e: Economy,
    allocation: LotteryAllocation,
    cert: EfficiencyCertificate,
    *,
    alloc_tol: float = ALLOCATION_TOL,
    mass_tol: float = TOL,
) -> list[str]:
    """Independent re-check of a certificate; returns the problems found."""
    problems: list[str] = []
    if cert.efficient:
        p = cert.prices or ()
        if len(p) != e.m or any(v < 0 for v in p):
            return ["prices missing or negative"]
        slack = e.capacity_array - allocation.expected_aggregate(e.m)
        for j in range(e.m):
            if slack[j] > alloc_tol and p[j] != 0:
                problems.append(f"good {e.goods[j]} has spare capacity but price {p[j]}")
        for i, (agent, lot) in enumerate(zip(e.agents, allocation)):
            for x in _support_masses(lot, mass_tol):
                for better in agent.ranked[: agent.rank(x)]:
                    gap = sum(pj * (bj - xj) for pj, bj, xj in zip(p, better, x))
                    if gap < 1:
                        problems.append(f"agent {i}: {better} costs only {gap} more than {x}")
        return problems
    if not cert.improvement:
        return ["inefficiency certificate carries no shifts"]
    try:
        shifted = apply_shifts(allocation, cert.improvement)
    except ValueError as exc:
        return [f"shifts do not give valid lotteries: {exc}"]
    over = shifted.expected_aggregate(e.m) - e.capacity_array
    for j in np.flatnonzero(over > alloc_tol):
        problems.append(f"good {e.goods[j]} over capacity by {over[j]:.3g} after the shifts")
    strict = False
    for i, agent in enumerate(e.agents):
        res = sd_dominates(agent, shifted[i], allocation[i])
        if not res.dominates:
            problems.append(f"agent {i} is worse off after the shifts")
        strict |= res.strict
    if not strict:
        problems.append("no agent strictly improves")
    return problems


def budgets_from_prices(
    e: Economy, allocation: LotteryAllocation, p, *, alloc_tol: float = ALLOCATION_TOL, mass_tol: float = TOL
) -> list[BudgetDistribution]:
    """Discrete budgets ``p.x`` w.p. ``P(x)`` that make ``(p, allocation)`` an equilibrium.

    Raises:
        NotCertified: ``p`` violates the pricing conditions for ``allocation``.
    """
    prices = tuple(Fraction(v) if isinstance(v, (int, Fraction)) else Fraction(float(v)) for v in p)
    problems = check_certificate(e, allocation, EfficiencyCertificate(True, prices), alloc_tol=alloc_tol, mass_tol=mass_tol)
    if problems:
        raise NotCertified("; ".join(problems))
    # same float arithmetic as demand evaluation, so each bundle is exactly affordable
    as_float = np.array([float(v) for v in prices])
    out = []
    for lot in allocation:
        pairs: dict[float, float] = {}
        for x, q in lot.items():
            cost = float(np.dot(as_float, x))
            pairs[cost] = pairs.get(cost, 0.0) + float(q)
        total = sum(pairs.values())
        out.append(BudgetDistribution.discrete([(v, w / total) for v, w in sorted(pairs.items())]))
    return out


def is_kappa_expost_efficient(e: Economy, bundles: Sequence[Bundle], kappa: int, *, limit: int = SEARCH_LIMIT) -> bool:
    """Pareto efficiency of a deterministic allocation against some ``c' <= c + kappa``.

    The least restrictive choice is ``c' = sum_i x_i``: any allocation
    dominating ``x`` within a larger ``c'`` also fits the capacities it was
    compared against, so this ``c'`` exists iff the allocation is unbeaten at
    its own aggregate.  The search enumerates every profile of weakly
    preferred bundles.

    Raises:
        TooLarge: more than ``limit`` candidate profiles.
        UnknownBundle: some bundle is not acceptable to its agent.
    """
    bundles = [tuple(x) for x in bundles]
    agg = np.sum(np.asarray(bundles, dtype=int), axis=0)
    if np.any(agg > np.asarray(e.capacities) + kappa):
        return False
    options = []
    for i, (agent, x) in enumerate(zip(e.agents, bundles)):
        r = agent.rank(x)
        if r is None:
            raise UnknownBundle(f"agent {i}: bundle {x} is not acceptable")
        options.append([np.asarray(y, dtype=int) for y in agent.with_empty(e.m)[: r + 1]])
    size = math.prod(len(o) for o in options)
    if size > limit:
        raise TooLarge(f"{size} candidate allocations (limit {limit})")
    return not _dominated(options, agg)


def _dominated(options: list[list[np.ndarray]], cap: np.ndarray) -> bool:
    """Depth-first search for a profile within ``cap`` with some non-last choice."""
    n = len(options)

    def rec(i: int, used: np.ndarray, strict: bool) -> bool:
        if i == n:
            return strict
        last = len(options[i]) - 1
        for k, y in enumerate(options[i]):
            nxt = used + y
            if np.all(nxt <= cap) and rec(i + 1, nxt, strict or k < last):
                return True
        return False

    return rec(0, np.zeros_like(cap), False)


def project_lottery(agent: AgentPreference, lot: Lottery, m: int) -> Lottery:
    """``lot`` seen by ``agent``: bundles it finds unacceptable become the empty bundle."""
    masses: dict[Bundle, object] = {}
    for x, q in lot.items():
        key = x if agent.is_acceptable(x) else empty_bundle(m)
        masses[key] = masses.get(key, 0) + q
    return Lottery(masses)


def is_ordinal_envy_free(e: Economy, allocation: LotteryAllocation, *, tol: float = TOL) -> bool:
    """Every agent's lottery sd-dominates every other agent's, in its own ranking.

    Bundles in the other lottery that the agent finds unacceptable count as
    the empty bundle.
    """
    return not envy_pairs(e, allocation, tol=tol)


def envy_pairs(e: Economy, allocation: LotteryAllocation, *, tol: float = TOL) -> list[tuple[int, int]]:
    """Ordered pairs ``(i, k)`` where ``i``'s lottery fails to dominate ``k``'s for ``i``."""
    out = []
    for i, agent in enumerate(e.agents):
        for k in range(e.n):
            if k != i and not sd_dominates(agent, allocation[i], project_lottery(agent, allocation[k], e.m), tol=tol):
                out.append((i, k))
    return out


def _weakly_below(agent: AgentPreference, y: Bundle, x: Bundle) -> bool:
    """``x`` is weakly preferred to ``y``, unacceptable ``y`` counting as empty."""
    ry = agent.rank(y)
    if ry is None:
        ry = len(agent.ranked)
    return agent.rank(x) <= ry


def ef1_violations(e: Economy, impl: ExPostImplementation | Sequence[Sequence[Bundle]]) -> list[tuple[int, int, int]]:
    """``(atom, i, k)`` where ``i`` envies ``k`` even after removing any one unit."""
    atoms = [a.bundles for a in impl.atoms] if isinstance(impl, ExPostImplementation) else list(impl)
    out = []
    for t, bundles in enumerate(atoms):
        for i, agent in enumerate(e.agents):
            mine = tuple(bundles[i])
            for k, theirs in enumerate(bundles):
                theirs = tuple(theirs)
                if k == i or _weakly_below(agent, theirs, mine):
                    continue
                if not any(_weakly_below(agent, remove_one(theirs, j), mine) for j in range(e.m) if theirs[j] > 0):
                    out.append((t, i, k))
    return out


def is_ef1(e: Economy, impl: ExPostImplementation | Sequence[Sequence[Bundle]]) -> bool:
    """Envy-freeness up to one good in every atom."""
    return not ef1_violations(e, impl)


def l2_excess(e: Economy, bundles: Sequence[Bundle]) -> float:
    """Euclidean distance between aggregate demand and capacity."""
    agg = np.sum(np.asarray(bundles, dtype=float), axis=0)
    return float(np.linalg.norm(agg - e.capacity_array))


@dataclass(frozen=True)
class Selection:
    bundles: tuple[Bundle, ...]
    excess: float
    diameter: float
    bound: float  # D * sqrt(m) / 2, asserted
    unit_bound: float  # sqrt(delta * m / 2), reported only
    within_bound: bool
    ties: int = 1
    slack: float = 0.0  # distance from c to the expected aggregate


def shapley_folkman_select(e: Economy, allocation, *, limit: int = SEARCH_LIMIT) -> Selection:
    """Pick one support bundle per agent minimising :func:`l2_excess` by exhaustive search.

    ``allocation`` may be a LotteryAllocation or anything with an
    ``allocation`` attribute (such as a CeriSolution).  Ties go to the first
    profile in support order (most likely bundles first).

    Raises:
        TooLarge: the joint support exceeds ``limit``.
    """
    alloc = getattr(allocation, "allocation", allocation)
    supports = [sorted(lot.support, key=lambda x: (-float(lot.prob(x)), x)) for lot in alloc]
    size = math.prod(len(s) for s in supports)
    if size > limit:
        raise TooLarge(f"joint support has {size} points (limit {limit})")
    totals = np.zeros((1, e.m))
    for sup in supports:
        arr = np.asarray(sup, dtype=float)
        totals = (totals[:, None, :] + arr[None, :, :]).reshape(-1, e.m)
    dist = np.linalg.norm(totals - e.capacity_array, axis=1)
    best = int(np.argmin(dist))
    ties = int(np.sum(dist <= dist[best] + 1e-12))
    idx = np.unravel_index(best, [len(s) for s in supports])
    chosen = tuple(supports[i][k] for i, k in enumerate(idx))
    diameter = 0.0
    for sup in supports:
        arr = np.asarray(sup, dtype=float)
        if len(arr) > 1:
            diameter = max(diameter, float(np.max(np.linalg.norm(arr[:, None, :] - arr[None, :, :], axis=2))))
    bound = diameter * math.sqrt(e.m) / 2
    unit_bound = math.sqrt(e.delta * e.m / 2)
    excess = float(dist[best])
    # The selection lemma bounds the distance to the expected aggregate, which
    # sits away from c only on unpriced goods left unsold in expectation.
    slack = float(np.linalg.norm(alloc.expected_aggregate(e.m) - e.capacity_array))
    return Selection(chosen, excess, diameter, bound, unit_bound, excess <= bound + slack + 1e-9, ties, slack)
