"""Approximate market-clearing prices under random budgets, plus a verifier.

The fixed points of the capped price map ``p_j <- min((p_j + excess_j)^+, cap)``
are exactly the equilibria.  Iterating that map directly tends to oscillate,
so the solver moves each price in the direction of its excess demand with a
per-good step length that shrinks whenever the sign flips, and takes a
semismooth Newton step on the natural residual ``p - clip(p + excess, 0, cap)``
whenever that halves the residual (only for continuous budgets, where expected
demand is piecewise linear in prices).  Random restarts cover the rest.
Nothing here is guaranteed to converge: :func:`verify_ceri` is the ground
truth, and a run that misses tolerance raises
:class:`~ceri.errors.NotConverged` carrying its best iterate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import BudgetDistribution, Economy, LotteryAllocation, PriceVector, as_prices
from .demand import bundle_probabilities, expected_demand_jacobian
from .errors import EmptyEconomy, NotConverged

log = logging.getLogger(__name__)

Budgets = BudgetDistribution | Sequence[BudgetDistribution]


def per_agent_budgets(budgets: Budgets, n: int) -> list[BudgetDistribution]:
    if isinstance(budgets, BudgetDistribution):
        return [budgets] * n
    out = list(budgets)
    if len(out) != n:
        raise ValueError(f"{len(out)} budget distributions for {n} agents")
    return out


def default_price_cap(e: Economy, budgets: Budgets) -> float:
    """``(1 + max budget) * n * delta``: every nonempty bundle is unaffordable at the cap."""
    top = max(b.support_max for b in per_agent_budgets(budgets, e.n))
    return (1.0 + top) * e.n * max(e.delta, 1)


@dataclass(frozen=True)
class SolverConfig:
    price_cap: float | None = None
    damping: float = 0.5
    tol_clearing: float = 1e-6
    tol_slackness: float = 1e-6
    max_iters: int = 500
    restarts: int = 8
    seed: int = 0
    newton: bool = True

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.tol_clearing <= 0 or self.tol_slackness <= 0:
            raise ValueError("tolerances must be positive")
        if self.price_cap is not None and self.price_cap <= 0:
            raise ValueError("price cap must be positive")


@dataclass(frozen=True)
class CeriSolution:
    prices: PriceVector
    allocation: LotteryAllocation
    residual: np.ndarray
    iterations: int
    converged: bool = True
    restart: int = 0

    @property
    def max_violation(self) -> float:
        return clearing_violation(self.prices, self.residual, self.prices.cap)


@dataclass
class CeriReport:
    is_ceri: bool
    violations: list[str] = field(default_factory=list)
    residual: np.ndarray | None = None


class _Market:
    """Agents (or agent types with multiplicities) facing a common price vector."""

    def __init__(self, e: Economy, budgets: Budgets, counts: Sequence[float] | None = None):
        if e.n == 0 or e.m == 0:
            raise EmptyEconomy("economy needs at least one agent and one good")
        self.e = e
        self.budgets = per_agent_budgets(budgets, e.n)
        self.counts = np.ones(e.n) if counts is None else np.asarray(counts, dtype=float)
        self.capacity = e.capacity_array
        self.continuous = all(b.is_continuous for b in self.budgets)

    def allocation(self, p) -> LotteryAllocation:
        return LotteryAllocation(
            tuple(bundle_probabilities(a, p, b) for a, b in zip(self.e.agents, self.budgets))
        )

    def excess(self, p) -> np.ndarray:
        total = np.zeros(self.e.m)
        for a, b, k in zip(self.e.agents, self.budgets, self.counts):
            if k:
                total += k * bundle_probabilities(a, p, b).expectation(self.e.m)
        return total - self.capacity

    def jacobian(self, p) -> np.ndarray:
        jac = np.zeros((self.e.m, self.e.m))
        for a, b, k in zip(self.e.agents, self.budgets, self.counts):
            if k:
                jac += k * expected_demand_jacobian(a, p, b)
        return jac


def excess_demand(e: Economy, budgets: Budgets, p, *, counts=None) -> np.ndarray:
    """Aggregate expected demand minus capacity."""
    return _Market(e, budgets, counts).excess(as_prices(p))


def fixed_point_step(e: Economy, budgets: Budgets, p, *, alpha: float = 1.0, cap: float | None = None) -> np.ndarray:
    """One application of ``p_j <- min((p_j + alpha * excess_j)^+, cap)``."""
    prices = as_prices(p)
    if cap is None:
        cap = getattr(p, "cap", None) or default_price_cap(e, budgets)
    return _capped_step(prices, excess_demand(e, budgets, prices), alpha, cap)


def _capped_step(p: np.ndarray, z: np.ndarray, alpha: float, cap: float) -> np.ndarray:
    return np.minimum(np.maximum(p + alpha * z, 0.0), cap)


def natural_residual(p: np.ndarray, z: np.ndarray, cap: float) -> np.ndarray:
    return p - _capped_step(p, z, 1.0, cap)


def clearing_violation(p, z: np.ndarray, cap: float, tol_slackness: float = 0.0) -> float:
    """Largest breach of the clearing conditions: over-demand, or slack on a priced good."""
    prices = as_prices(p)
    worst = float(np.max(np.maximum(z, 0.0)))
    priced = prices > tol_slackness
    if priced.any():
        worst = max(worst, float(np.max(np.abs(z[priced]))))
    return worst


def _is_cleared(p, z, cfg: SolverConfig) -> bool:
    return clearing_violation(p, z, np.inf, cfg.tol_slackness) <= cfg.tol_clearing


def _newton_direction(market: _Market, p: np.ndarray, z: np.ndarray, cap: float) -> np.ndarray | None:
    phi = natural_residual(p, z, cap)
    trial = p + z
    interior = (trial > 0) & (trial < cap)
    jac = np.eye(len(p))
    if interior.any():
        jz = market.jacobian(p)
        jac[interior] = -jz[interior]
    try:
        d = np.linalg.solve(jac, -phi)
    except np.linalg.LinAlgError:
        d = np.linalg.lstsq(jac, -phi, rcond=None)[0]
    if not np.all(np.isfinite(d)):
        return None
    return d


def _run(market: _Market, p0: np.ndarray, cfg: SolverConfig, cap: float, scale: float):
    """One run from ``p0``; returns (best_p, best_z, iterations, cleared).

    Price moves that are not Newton steps follow the sign of excess demand
    with one step length per good: the length grows while a good's excess
    keeps its sign and halves when it flips, so steep or flat stretches of
    the demand curve do not stall the iteration.
    """
    p = p0.copy()
    z = market.excess(p)
    merit = float(np.max(np.abs(natural_residual(p, z, cap))))
    best = (merit, p, z)
    steps = np.full(len(p), cfg.damping * scale)
    last_sign = np.zeros(len(p))
    use_newton = cfg.newton and market.continuous
    for it in range(1, cfg.max_iters + 1):
        if _is_cleared(p, z, cfg):
            return p, z, it - 1, True
        if use_newton:
            d = _newton_direction(market, p, z, cap)
            if d is not None:
                # demand is piecewise linear, so a useful Newton step is a big
                # one; small gains are left to the sign iteration below
                cand = np.clip(p + d, 0.0, cap)
                zc = market.excess(cand)
                mc = float(np.max(np.abs(natural_residual(cand, zc, cap))))
                if mc < 0.5 * merit:
                    p, z, merit = cand, zc, mc
                else:
                    d = None
            if d is not None:
                if merit < best[0]:
                    best = (merit, p, z)
                continue
        sign = np.sign(z)
        # a free good with no excess demand stays put
        sign[(p <= 0) & (z < 0)] = 0
        steps = np.where(sign * last_sign < 0, steps * 0.5, np.where(sign == last_sign, steps * 1.2, steps))
        # no relevant price exceeds the top budget, so neither should a step
        steps = np.minimum(steps, scale)
        last_sign = sign
        p = np.clip(p + sign * np.minimum(steps, np.abs(z) * cap), 0.0, cap)
        z = market.excess(p)
        merit = float(np.max(np.abs(natural_residual(p, z, cap))))
        if merit < best[0]:
            best = (merit, p, z)
    _, p, z = best
    return p, z, cfg.max_iters, _is_cleared(p, z, cfg)


def solve_ceri(e: Economy, budgets: Budgets, cfg: SolverConfig | None = None, *, counts=None) -> CeriSolution:
    """Search for prices at which expected demand clears every market.

    ``counts`` gives each agent a multiplicity, so an economy of types can be
    solved without materialising identical agents.

    Raises:
        NotConverged: no restart met tolerance; ``.best`` is the best CeriSolution.
        EmptyEconomy: no agents or no goods.
    """
    cfg = cfg or SolverConfig()
    market = _Market(e, budgets, counts)
    cap = cfg.price_cap or default_price_cap(e, market.budgets)
    rng = np.random.default_rng(cfg.seed)
    top = max(b.support_max for b in market.budgets)
    # A good priced above the top budget is in no affordable bundle, so the
    # search box can stop just past it; wider boxes only slow the iteration.
    box = min(cap, 2.0 * max(top, 1.0))
    best: tuple[float, np.ndarray, np.ndarray, int, int] | None = None
    total_iters = 0
    for r in range(cfg.restarts + 1):
        p0 = np.zeros(e.m) if r == 0 else rng.uniform(0.0, max(top, 1.0), size=e.m)
        p, z, iters, ok = _run(market, p0, cfg, box, max(top, 1.0))
        total_iters += iters
        score = clearing_violation(p, z, cap, cfg.tol_slackness)
        if best is None or score < best[0]:
            best = (score, p, z, r, total_iters)
        if ok:
            log.debug("cleared after %d iterations (restart %d)", total_iters, r)
            return CeriSolution(PriceVector(tuple(p), cap), market.allocation(p), z, total_iters, True, r)
    score, p, z, r, _ = best
    sol = CeriSolution(PriceVector(tuple(p), cap), market.allocation(p), z, total_iters, False, r)
    raise NotConverged(f"best clearing violation {score:.3g} after {cfg.restarts + 1} runs", best=sol)


def verify_ceri(e: Economy, budgets: Budgets, p, allocation: LotteryAllocation, tol: float = 1e-6) -> CeriReport:
    """Check the two equilibrium conditions for ``(p, allocation)``.

    (i) each lottery equals the agent's random demand at ``p``;
    (ii) expected aggregate demand is at most capacity, with equality on
    every good priced above ``tol``.
    """
    prices = as_prices(p)
    per_agent = per_agent_budgets(budgets, e.n)
    violations: list[str] = []
    if len(allocation) != e.n:
        return CeriReport(False, [f"allocation has {len(allocation)} lotteries for {e.n} agents"])
    for i, (agent, b, lot) in enumerate(zip(e.agents, per_agent, allocation)):
        demanded = bundle_probabilities(agent, prices, b)
        if not lot.close_to(demanded, tol):
            violations.append(f"agent {i}: lottery differs from demand at these prices")
    z = allocation.expected_aggregate(e.m) - e.capacity_array
    for j in range(e.m):
        if z[j] > tol:
            violations.append(f"good {e.goods[j]}: over-demanded by {z[j]:.6g}")
        elif prices[j] > tol and abs(z[j]) > tol:
            violations.append(f"good {e.goods[j]}: priced at {prices[j]:.6g} but {-z[j]:.6g} units unsold")
    return CeriReport(not violations, violations, z)
