"""Ex-post implementation of a lottery allocation.

A lottery allocation whose expected aggregate fits within capacity can be
written as a convex combination of deterministic allocations that overshoot
each capacity by at most ``delta - 1`` units.  :func:`decompose_lottery`
finds such a combination by column generation: the master LP matches
per-agent marginals with the atoms found so far, and the pricing step
searches for a new atom by iterative LP rounding.  Rounding only ever drops a
capacity row once the worst possible overshoot on it is at most
``delta - 1``, so every generated atom is near-feasible by construction.

:func:`build_implementation` then attaches a budget draw to every agent in
every atom, taken from the budget distribution conditioned on the demand
segment of the agent's bundle.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .core import (
    AgentPreference,
    BudgetDistribution,
    Bundle,
    Economy,
    LotteryAllocation,
    TOL,
    empty_bundle,
)
from .demand import bundle_probabilities, demand_profile, optimal_bundle
from .equilibrium import Budgets, CeriSolution, per_agent_budgets
from .errors import Infeasible, InfeasibleMarginals, LPFailure, TooLarge, ZeroMassBundle

log = logging.getLogger(__name__)

# Marginals must be reproduced within this.
MARGINAL_TOL = 1e-6
# Largest joint support the enumeration oracle will expand.
ENUMERATION_LIMIT = 100_000
# decompose_lottery hands joint supports up to this size straight to the oracle.
DIRECT_ENUMERATION = 512
_FRAC = 1e-9


@dataclass(frozen=True)
class Atom:
    weight: float
    bundles: tuple[Bundle, ...]
    budgets: tuple[float, ...] = ()


@dataclass(frozen=True)
class ExPostImplementation:
    atoms: tuple[Atom, ...]
    slack_bound: int

    def __len__(self) -> int:
        return len(self.atoms)

    def marginals(self, n: int) -> list[dict[Bundle, float]]:
        out: list[dict[Bundle, float]] = [{} for _ in range(n)]
        for atom in self.atoms:
            for i, x in enumerate(atom.bundles):
                out[i][x] = out[i].get(x, 0.0) + atom.weight
        return out

    def max_overshoot(self, e: Economy) -> int:
        """Largest ``(sum_i x_i - c)_j`` over atoms and goods (may be negative)."""
        worst = -math.inf
        for atom in self.atoms:
            total = np.sum(np.asarray(atom.bundles, dtype=int), axis=0)
            worst = max(worst, int(np.max(total - np.asarray(e.capacities))))
        return int(worst)


def _check_marginals_fit(e: Economy, allocation: LotteryAllocation, tol: float) -> None:
    if len(allocation) != e.n:
        raise ValueError(f"allocation has {len(allocation)} lotteries for {e.n} agents")
    over = allocation.expected_aggregate(e.m) - e.capacity_array
    if np.any(over > tol):
        j = int(np.argmax(over))
        raise InfeasibleMarginals(f"expected demand for {e.goods[j]} exceeds capacity by {over[j]:.3g}")


def _supports(allocation: LotteryAllocation) -> list[list[tuple[Bundle, float]]]:
    return [sorted(((x, float(q)) for x, q in lot.items()), key=lambda t: -t[1]) for lot in allocation]


def _marginal_rows(supports) -> tuple[list[tuple[int, Bundle]], dict[tuple[int, Bundle], int], np.ndarray]:
    keys = [(i, x) for i, sup in enumerate(supports) for x, _ in sup]
    index = {k: r for r, k in enumerate(keys)}
    q = np.array([p for sup in supports for _, p in sup])
    return keys, index, q


def enumerate_decomposition_oracle(
    e: Economy, allocation: LotteryAllocation, kappa: int, *, tol: float = TOL
) -> list[tuple[float, tuple[Bundle, ...]]]:
    """Decompose by brute force over every joint support point within ``c + kappa``.

    Raises:
        TooLarge: the joint support has more than 10^5 points.
        Infeasible: no convex combination of admissible points has these marginals.
        InfeasibleMarginals: expected demand already exceeds capacity.
    """
    _check_marginals_fit(e, allocation, tol)
    supports = _supports(allocation)
    size = math.prod(len(s) for s in supports)
    if size > ENUMERATION_LIMIT:
        raise TooLarge(f"joint support has {size} points (limit {ENUMERATION_LIMIT})")
    keys, index, q = _marginal_rows(supports)
    limit = np.asarray(e.capacities) + kappa
    columns: list[tuple[Bundle, ...]] = []
    for combo in itertools.product(*[[x for x, _ in s] for s in supports]):
        if np.all(np.sum(np.asarray(combo, dtype=int), axis=0) <= limit):
            columns.append(combo)
    if not columns:
        raise Infeasible(f"no joint support point fits within capacity + {kappa}")
    a = np.zeros((len(keys), len(columns)))
    for c, combo in enumerate(columns):
        for i, x in enumerate(combo):
            a[index[(i, x)], c] = 1.0
    res = linprog(np.zeros(len(columns)), A_eq=a, b_eq=q, bounds=(0, None), method="highs-ds")
    if res.status == 2:
        raise Infeasible(f"marginals are not a mixture of allocations within capacity + {kappa}")
    if res.status != 0:
        raise LPFailure(res.message)
    return _clean_atoms(res.x, columns)


def _clean_atoms(weights: np.ndarray, columns: Sequence[tuple[Bundle, ...]]) -> list[tuple[float, tuple[Bundle, ...]]]:
    keep = [(float(w), columns[c]) for c, w in enumerate(weights) if w > 1e-12]
    total = sum(w for w, _ in keep)
    return [(w / total, combo) for w, combo in keep]


class _RoundingOracle:
    """Max-weight deterministic allocation within ``c + (delta - 1)`` by iterative rounding.

    Given weights ``u[i][x]`` the LP relaxation over the capacity polytope is
    solved at a vertex; zero variables are deleted, agents at one are fixed,
    and a capacity row is dropped once the remaining agents cannot overshoot
    it by more than ``delta - 1``.  Each step keeps the previous vertex
    feasible, so the rounded value is at least the LP optimum.
    """

    def __init__(self, e: Economy, supports: list[list[Bundle]]):
        self.capacity = np.asarray(e.capacities, dtype=float)
        self.supports = supports
        self.kappa = max(e.delta - 1, 0)
        self.fallbacks = 0

    def __call__(self, u: list[dict[Bundle, float]]) -> tuple[Bundle, ...]:
        n = len(self.supports)
        m = len(self.capacity)
        chosen: list[Bundle | None] = [None] * n
        free = {i: list(sup) for i, sup in enumerate(self.supports)}
        for i, sup in list(free.items()):
            if len(sup) == 1:
                chosen[i] = sup[0]
                del free[i]
        used = np.zeros(m)
        for x in chosen:
            if x is not None:
                used += x
        active = set(range(m))
        while free:
            variables = [(i, x) for i in sorted(free) for x in free[i]]
            y = self._solve(variables, free, u, used, active)
            progressed = False
            for (i, x), v in zip(variables, y):
                if v > 1 - _FRAC and chosen[i] is None:
                    chosen[i] = x
                    used += x
                    del free[i]
                    progressed = True
            for (i, x), v in zip(variables, y):
                if i in free and v < _FRAC and len(free[i]) > 1:
                    free[i].remove(x)
                    progressed = True
            if not free:
                break
            worst = {j: sum(max(x[j] for x in free[i]) for i in free) for j in active}
            droppable = [j for j in sorted(active) if worst[j] - (self.capacity[j] - used[j]) <= self.kappa + 1e-9]
            if droppable:
                active.difference_update(droppable)
                progressed = True
            if not progressed:
                # not expected at a vertex; drop the least risky row and carry on
                j = min(active, key=lambda k: worst[k] - (self.capacity[k] - used[k]))
                log.warning("rounding stalled; dropping capacity row %d without the overshoot guarantee", j)
                self.fallbacks += 1
                active.discard(j)
        return tuple(x if x is not None else empty_bundle(len(self.capacity)) for x in chosen)

    def _solve(self, variables, free, u, used, active) -> np.ndarray:
        agents = sorted(free)
        row_of = {i: r for r, i in enumerate(agents)}
        nv = len(variables)
        a_eq = np.zeros((len(agents), nv))
        rows = sorted(active)
        a_ub = np.zeros((len(rows), nv))
        cost = np.zeros(nv)
        for c, (i, x) in enumerate(variables):
            a_eq[row_of[i], c] = 1.0
            for r, j in enumerate(rows):
                a_ub[r, c] = x[j]
            cost[c] = -u[i].get(x, 0.0)
        b_ub = np.array([self.capacity[j] - used[j] for j in rows])
        res = linprog(
            cost,
            A_ub=a_ub if rows else None,
            b_ub=b_ub if rows else None,
            A_eq=a_eq,
            b_eq=np.ones(len(agents)),
            bounds=(0, 1),
            method="highs-ds",
        )
        if res.status != 0:
            raise LPFailure(f"rounding LP failed: {res.message}")
        return res.x


def decompose_lottery(
    e: Economy,
    allocation: LotteryAllocation,
    *,
    tol: float = TOL,
    max_rounds: int = 500,
) -> list[tuple[float, tuple[Bundle, ...]]]:
    """Write ``allocation`` as a mixture of deterministic allocations within ``c + (delta - 1)``.

    Args:
        e: the economy; capacities and delta fix the admissible atoms.
        allocation: one lottery per agent with expected aggregate at most ``c``.
        tol: slack allowed on the expected-aggregate precondition.
        max_rounds: cap on column-generation rounds.

    Returns:
        ``(weight, bundles)`` pairs with weights summing to one.

    Raises:
        InfeasibleMarginals: expected aggregate exceeds capacity beyond ``tol``.
        LPFailure: an LP failed or column generation did not close the gap.
    """
    _check_marginals_fit(e, allocation, tol)
    supports = _supports(allocation)
    kappa = max(e.delta - 1, 0)
    if all(len(s) == 1 for s in supports):
        return [(1.0, tuple(s[0][0] for s in supports))]
    if math.prod(len(s) for s in supports) <= DIRECT_ENUMERATION:
        return enumerate_decomposition_oracle(e, allocation, kappa, tol=tol)

    keys, index, q = _marginal_rows(supports)
    oracle = _RoundingOracle(e, [[x for x, _ in s] for s in supports])
    columns: list[tuple[Bundle, ...]] = []
    seen: set[tuple[Bundle, ...]] = set()

    def add(col: tuple[Bundle, ...]) -> bool:
        if col in seen:
            return False
        seen.add(col)
        columns.append(col)
        return True

    # Seed with the per-agent most likely bundles, rounded to fit.
    add(oracle([{x: p for x, p in s} for s in supports]))
    n_rows = len(keys)
    for round_ in range(max_rounds):
        a = np.zeros((n_rows, len(columns)))
        for c, combo in enumerate(columns):
            for i, x in enumerate(combo):
                a[index[(i, x)], c] = 1.0
        # artificial slack per marginal row keeps the master feasible
        a_full = np.hstack([a, np.eye(n_rows)])
        cost = np.concatenate([np.zeros(len(columns)), np.ones(n_rows)])
        res = linprog(cost, A_eq=a_full, b_eq=q, bounds=(0, None), method="highs-ds")
        if res.status != 0:
            raise LPFailure(f"master LP failed: {res.message}")
        gap = float(res.fun)
        if gap <= 1e-10:
            log.debug("decomposed in %d rounds with %d columns", round_, len(columns))
            return _clean_atoms(res.x[: len(columns)], columns)
        duals = res.eqlin.marginals
        u: list[dict[Bundle, float]] = [{} for _ in supports]
        for (i, x), r in index.items():
            u[i][x] = float(duals[r])
        col = oracle(u)
        value = sum(u[i].get(x, 0.0) for i, x in enumerate(col))
        if value <= 1e-12 or not add(col):
            raise LPFailure(f"column generation stalled with marginal gap {gap:.3g}")
    raise LPFailure(f"column generation did not finish in {max_rounds} rounds")


def conditional_budget(agent: AgentPreference, p, b: BudgetDistribution, x: Bundle) -> BudgetDistribution:
    """Budget distribution conditioned on the agent demanding ``x`` at prices ``p``.

    Raises:
        ZeroMassBundle: ``x`` is demanded with probability zero.
    """
    x = tuple(x)
    segments = demand_profile(agent, p).segments_for(x)
    mass = sum(b.interval_mass(s.lo, s.hi) for s in segments)
    if mass <= 0:
        raise ZeroMassBundle(f"bundle {x} is demanded with probability zero")
    # a bundle occupies at most one segment of the profile
    seg = max(segments, key=lambda s: b.interval_mass(s.lo, s.hi))
    return b.restrict(seg.lo, seg.hi)


def build_implementation(
    e: Economy, budgets: Budgets, ceri: CeriSolution, *, seed: int = 0
) -> ExPostImplementation:
    """Decompose the equilibrium lotteries and attach a budget draw to every agent in every atom.

    Each budget is drawn from the agent's conditional budget distribution
    given its bundle in that atom, so the bundle is optimal at the drawn
    budget and pooled budgets reproduce the demand-segment masses.
    """
    per_agent = per_agent_budgets(budgets, e.n)
    atoms_raw = decompose_lottery(e, ceri.allocation, tol=MARGINAL_TOL)
    rng = np.random.default_rng(seed)
    cache: dict[tuple[int, Bundle], BudgetDistribution] = {}
    atoms = []
    for w, combo in atoms_raw:
        drawn = []
        for i, x in enumerate(combo):
            key = (i, x)
            if key not in cache:
                cache[key] = conditional_budget(e.agents[i], ceri.prices, per_agent[i], x)
            drawn.append(float(cache[key].sample(rng)))
        atoms.append(Atom(w, combo, tuple(drawn)))
    return ExPostImplementation(tuple(atoms), max(e.delta - 1, 0))


def sample_expost(impl: ExPostImplementation, seed: int) -> tuple[tuple[Bundle, ...], tuple[float, ...]]:
    """Draw one atom by weight; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    weights = np.array([a.weight for a in impl.atoms])
    k = int(rng.choice(len(weights), p=weights / weights.sum()))
    atom = impl.atoms[k]
    return atom.bundles, atom.budgets


def check_implementation(
    e: Economy,
    budgets: Budgets,
    p,
    allocation: LotteryAllocation,
    impl: ExPostImplementation,
    *,
    kappa: int | None = None,
    tol: float = MARGINAL_TOL,
) -> list[str]:
    """Violations of the ex-post implementation conditions (empty when all hold).

    Checks weights, marginals against ``allocation``, near-feasibility at
    ``kappa`` (default ``impl.slack_bound``), optimality of each bundle at its
    attached budget, that each budget lies in its distribution's support, and
    that budget mass pooled by demand segment matches the lottery.
    """
    per_agent = per_agent_budgets(budgets, e.n)
    kappa = impl.slack_bound if kappa is None else kappa
    problems: list[str] = []
    total = sum(a.weight for a in impl.atoms)
    if abs(total - 1.0) > tol:
        problems.append(f"atom weights sum to {total}")
    if any(a.weight < 0 for a in impl.atoms):
        problems.append("negative atom weight")
    marg = impl.marginals(e.n)
    for i, lot in enumerate(allocation):
        for x in set(marg[i]) | set(lot.masses):
            if abs(marg[i].get(x, 0.0) - float(lot.prob(x))) > tol:
                problems.append(f"agent {i}: marginal of {x} is {marg[i].get(x, 0.0):.6g}, expected {float(lot.prob(x)):.6g}")
    limit = np.asarray(e.capacities) + kappa
    for k, atom in enumerate(impl.atoms):
        agg = np.sum(np.asarray(atom.bundles, dtype=int), axis=0)
        if np.any(agg > limit):
            problems.append(f"atom {k}: aggregate {tuple(int(v) for v in agg)} exceeds capacity + {kappa}")
        if len(atom.budgets) != e.n:
            problems.append(f"atom {k}: no budget for every agent")
            continue
        for i, (x, b) in enumerate(zip(atom.bundles, atom.budgets)):
            dist = per_agent[i]
            if not _in_support(dist, b):
                problems.append(f"atom {k}, agent {i}: budget {b} outside the support")
            if optimal_bundle(e.agents[i], p, b) != tuple(x):
                problems.append(f"atom {k}, agent {i}: {x} is not optimal at budget {b}")
    for i in range(e.n):
        demanded = bundle_probabilities(e.agents[i], p, per_agent[i])
        pooled: dict[Bundle, float] = {}
        for atom in impl.atoms:
            if len(atom.budgets) == e.n:
                y = optimal_bundle(e.agents[i], p, atom.budgets[i])
                pooled[y] = pooled.get(y, 0.0) + atom.weight
        for x in set(pooled) | set(demanded.masses):
            if abs(pooled.get(x, 0.0) - float(demanded.prob(x))) > tol:
                problems.append(f"agent {i}: pooled budget mass on the segment of {x} differs from its demand probability")
    return problems


def _in_support(b: BudgetDistribution, v: float) -> bool:
    for w, piece in b.components:
        if w <= 0:
            continue
        if hasattr(piece, "value"):
            if abs(piece.value - v) <= TOL:
                return True
        elif piece.lo - TOL <= v <= piece.hi + TOL:
            return True
    return False
