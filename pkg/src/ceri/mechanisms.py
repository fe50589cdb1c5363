"""Allocation mechanisms: CERI-S, CERI-L and classical baselines with their price mappings.

Baselines (serial dictatorship, RSD, probabilistic serial, bundled PS) each
come with a map into equilibrium form: prices and budget distributions under
which their allocation is a competitive equilibrium from random incomes.
Those maps are checked a posteriori with :func:`~ceri.equilibrium.verify_ceri`.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import binomtest

from .core import (
    AgentPreference,
    BudgetDistribution,
    Bundle,
    Economy,
    Lottery,
    LotteryAllocation,
    PriceVector,
    UniformInterval,
    bundle_size,
    empty_bundle,
)
from .decompose import Atom, ExPostImplementation, build_implementation
from .demand import demand_profile
from .equilibrium import CeriSolution, SolverConfig, solve_ceri, verify_ceri
from .errors import NotConverged, NotUnitDemand
from .verify import project_lottery, sd_dominates

log = logging.getLogger(__name__)

# Lotteries from different solves are compared with this slack.
SD_TOL = 1e-7


@dataclass(frozen=True)
class MechanismOutcome:
    mechanism: str
    allocation: LotteryAllocation
    implementation: ExPostImplementation | None = None
    prices: PriceVector | None = None
    budgets: tuple[BudgetDistribution, ...] | None = None
    grid_point: tuple[int, ...] | None = None
    seeds: Mapping[str, int] = field(default_factory=dict)
    solution: CeriSolution | None = None


def _child_seeds(seed: int, names: Sequence[str]) -> dict[str, int]:
    state = np.random.SeedSequence(seed).generate_state(len(names), dtype=np.uint64)
    return {name: int(s) for name, s in zip(names, state)}


# ---------------------------------------------------------------- CERI-S


def ceri_s(e: Economy, epsilon: float, seed: int = 0, *, cfg: SolverConfig | None = None, implement: bool = True) -> MechanismOutcome:
    """Equilibrium with identical budgets ``U[1, 1 + epsilon]``, then an ex-post implementation.

    Raises:
        ValueError: ``epsilon`` outside ``(0, 1/m)``.
        NotConverged: the price solver missed tolerance.
    """
    if not 0 < epsilon < 1 / e.m:
        raise ValueError(f"epsilon must lie in (0, 1/m) = (0, {1 / e.m:.4g}), got {epsilon}")
    seeds = _child_seeds(seed, ["solver", "implementation"])
    budget = BudgetDistribution.uniform(1.0, 1.0 + epsilon)
    cfg = replace(cfg or SolverConfig(), seed=seeds["solver"])
    sol = solve_ceri(e, budget, cfg)
    impl = build_implementation(e, budget, sol, seed=seeds["implementation"]) if implement else None
    return MechanismOutcome("ceri-s", sol.allocation, impl, sol.prices, (budget,) * e.n, None, {"seed": seed, **seeds}, sol)


# ---------------------------------------------------------------- random grid and CERI-L


@dataclass(frozen=True)
class RandomGrid:
    lam: int
    tau: int
    offsets: tuple[int, ...]
    seed: int | None = None

    def __post_init__(self):
        if self.lam < 1:
            raise ValueError("grid step must be a positive integer")
        if len(self.offsets) != self.tau or any(not 1 <= z <= self.lam for z in self.offsets):
            raise ValueError("need one offset in {1..lam} per coordinate")

    def contains(self, t: int, g: int) -> bool:
        z = self.offsets[t]
        return g == 0 or (g >= z and (g - z) % self.lam == 0)


def build_grid(lam: int, tau: int, seed: int) -> RandomGrid:
    rng = np.random.default_rng(seed)
    return RandomGrid(int(lam), int(tau), tuple(int(z) for z in rng.integers(1, lam + 1, size=tau)), seed)


def round_up(grid: RandomGrid, psi: Sequence[int]) -> tuple[int, ...]:
    """Smallest grid point at least ``psi`` in every coordinate."""
    if len(psi) != grid.tau:
        raise ValueError(f"type vector has {len(psi)} coordinates, grid has {grid.tau}")
    out = []
    for z, v in zip(grid.offsets, psi):
        if v <= 0:
            out.append(0)
        elif v <= z:
            out.append(z)
        else:
            out.append(z + math.ceil((v - z) / grid.lam) * grid.lam)
    return tuple(out)


@dataclass(frozen=True)
class TypeCensus:
    types: tuple[AgentPreference, ...]
    counts: tuple[int, ...]
    agent_type: tuple[int, ...]

    @property
    def tau(self) -> int:
        return len(self.types)


def census(e: Economy, universe: Sequence[AgentPreference] | None = None) -> TypeCensus:
    """Group agents by identical rankings; ``universe`` fixes the type list and its order."""
    keys: list[tuple[Bundle, ...]] = []
    types: list[AgentPreference] = []
    if universe is not None:
        for t in universe:
            if t.ranked not in keys:
                keys.append(t.ranked)
                types.append(AgentPreference(t.ranked))
    index = {k: t for t, k in enumerate(keys)}
    agent_type = []
    for a in e.agents:
        if a.ranked not in index:
            if universe is not None:
                raise ValueError(f"agent type {a.ranked} is outside the given type universe")
            index[a.ranked] = len(keys)
            keys.append(a.ranked)
            types.append(AgentPreference(a.ranked))
        agent_type.append(index[a.ranked])
    counts = [0] * len(keys)
    for t in agent_type:
        counts[t] += 1
    return TypeCensus(tuple(types), tuple(counts), tuple(agent_type))


def ceri_l_budget(delta: int) -> BudgetDistribution:
    """``U[1, delta/(delta-1)]``; unit demand uses ``U[1, 2]``."""
    hi = 2.0 if delta <= 1 else delta / (delta - 1)
    return BudgetDistribution.uniform(1.0, hi)


def ceri_l(
    e: Economy,
    seed: int = 0,
    *,
    lam: int | None = None,
    type_universe: Sequence[AgentPreference] | None = None,
    cfg: SolverConfig | None = None,
    implement: bool = True,
    cache: dict | None = None,
) -> MechanismOutcome:
    """Large-market mechanism: round the type census up to a random grid and price that economy.

    Args:
        e: reported economy.
        seed: source of the grid offsets and the implementation draws.
        lam: grid step; defaults to ``floor(tau * sqrt(n))``.
        type_universe: fixed list of types, so that the grid dimension does
            not depend on which types happen to be reported.
        cfg: solver overrides.
        implement: also build the ex-post implementation over real agents.
        cache: optional dict reused across calls to memoise phantom-economy
            solves by grid point.
    """
    cen = census(e, type_universe)
    delta = max(a.max_size for a in (type_universe or e.agents)) if (type_universe or e.agents) else 0
    budget = ceri_l_budget(delta)
    lam = lam if lam is not None else max(1, math.floor(cen.tau * math.sqrt(e.n)))
    seeds = _child_seeds(seed, ["grid", "solver", "implementation"])
    grid = build_grid(lam, cen.tau, seeds["grid"])
    point = round_up(grid, cen.counts)
    phantom = Economy(e.capacities, cen.types, e.goods)
    key = (point, cen.types)
    if cache is not None and key in cache:
        sol = cache[key]
    else:
        cfg = replace(cfg or SolverConfig(), seed=seeds["solver"])
        sol = solve_ceri(phantom, budget, cfg, counts=point)
        if cache is not None:
            cache[key] = sol
    real = LotteryAllocation(tuple(sol.allocation[t] for t in cen.agent_type))
    real_sol = replace(sol, allocation=real, residual=real.expected_aggregate(e.m) - e.capacity_array)
    impl = build_implementation(e, budget, real_sol, seed=seeds["implementation"]) if implement else None
    trail = {"seed": seed, "lambda": lam, **seeds}
    return MechanismOutcome("ceri-l", real, impl, sol.prices, (budget,) * e.n, point, trail, real_sol)


# ---------------------------------------------------------------- serial dictatorship and RSD


def serial_dictatorship(e: Economy, order: Sequence[int]) -> list[Bundle]:
    """Each agent in turn takes its best acceptable bundle that fits the remaining supply."""
    if sorted(order) != list(range(e.n)):
        raise ValueError("order must be a permutation of the agents")
    left = list(e.capacities)
    out: list[Bundle] = [empty_bundle(e.m)] * e.n
    for i in order:
        for x in e.agents[i].ranked:
            if all(xj <= lj for xj, lj in zip(x, left)):
                out[i] = x
                left = [lj - xj for xj, lj in zip(x, left)]
                break
    return out


def sd_to_ceri(e: Economy, order: Sequence[int], bundles: Sequence[Bundle]) -> tuple[PriceVector, list[BudgetDistribution]]:
    """Budgets ``1/k`` by position in ``order``; each exhausted good priced by its last taker.

    The taker's budget is split evenly over the units of its bundle.  This is
    exact for unit demand and a best-effort extension otherwise; check the
    result with :func:`~ceri.equilibrium.verify_ceri`.
    """
    position = {i: k + 1 for k, i in enumerate(order)}
    budgets = [BudgetDistribution.point(1.0 / position[i]) for i in range(e.n)]
    used = np.sum(np.asarray(bundles, dtype=int), axis=0)
    prices = [0.0] * e.m
    for i in order:
        x = bundles[i]
        size = bundle_size(x)
        for j in range(e.m):
            if x[j] > 0 and used[j] >= e.capacities[j]:
                prices[j] = (1.0 / position[i]) / size
    return PriceVector(tuple(prices)), budgets


def rsd(e: Economy, *, seed: int = 0, exact_limit: int = 1_000_000, samples: int = 100_000) -> LotteryAllocation:
    """Random serial dictatorship: exact over all orders when ``n!`` is small, else sampled."""
    counts: list[dict[Bundle, int]] = [{} for _ in range(e.n)]
    if math.factorial(e.n) <= exact_limit:
        orders = itertools.permutations(range(e.n))
        total = math.factorial(e.n)
    else:
        rng = np.random.default_rng(seed)
        orders = (tuple(rng.permutation(e.n)) for _ in range(samples))
        total = samples
    for order in orders:
        for i, x in enumerate(serial_dictatorship(e, order)):
            counts[i][x] = counts[i].get(x, 0) + 1
    return LotteryAllocation(tuple(Lottery({x: Fraction(c, total) for x, c in cnt.items()}) for cnt in counts))


# ---------------------------------------------------------------- eating mechanisms


@dataclass(frozen=True)
class EatingTrace:
    """Event log of a simultaneous-eating run over the clock ``[0, 1]``.

    ``exhausted_at[j]`` is the time good ``j`` ran out (None if never) and
    ``rank[j]`` its position in the exhaustion order (simultaneous goods
    share a rank; None if never exhausted).  ``eaten[i]`` lists the bundles
    agent ``i`` ate, in order, with start and end times.
    """

    exhausted_at: tuple[Fraction | None, ...]
    rank: tuple[int | None, ...]
    eaten: tuple[tuple[tuple[Bundle, Fraction, Fraction], ...], ...]


def _eat(e: Economy) -> tuple[LotteryAllocation, EatingTrace]:
    left = [Fraction(c) for c in e.capacities]
    exhausted_at: list[Fraction | None] = [None] * e.m
    rank: list[int | None] = [None] * e.m
    eaten: list[list[tuple[Bundle, Fraction, Fraction]]] = [[] for _ in range(e.n)]
    amounts: list[dict[Bundle, Fraction]] = [{} for _ in range(e.n)]
    t = Fraction(0)
    events = 0
    while t < 1:
        current: list[Bundle | None] = []
        for a in e.agents:
            current.append(next((x for x in a.ranked if all(left[j] > 0 for j in range(e.m) if x[j] > 0)), None))
        if all(x is None for x in current):
            break
        rate = [sum(x[j] for x in current if x is not None) for j in range(e.m)]
        dt = 1 - t
        for j in range(e.m):
            if rate[j] > 0:
                dt = min(dt, left[j] / rate[j])
        for i, x in enumerate(current):
            if x is None:
                continue
            amounts[i][x] = amounts[i].get(x, Fraction(0)) + dt
            if eaten[i] and eaten[i][-1][0] == x and eaten[i][-1][2] == t:
                eaten[i][-1] = (x, eaten[i][-1][1], t + dt)
            else:
                eaten[i].append((x, t, t + dt))
        t += dt
        events += 1
        newly = False
        for j in range(e.m):
            if rate[j] > 0:
                left[j] -= rate[j] * dt
                if left[j] == 0 and exhausted_at[j] is None:
                    exhausted_at[j] = t
                    newly = True
        if newly:
            r = 1 + max((v for v in rank if v is not None), default=0)
            for j in range(e.m):
                if exhausted_at[j] == t and rank[j] is None:
                    rank[j] = r
    lotteries = []
    for i in range(e.n):
        masses: dict[Bundle, Fraction] = dict(amounts[i])
        rest = 1 - sum(masses.values(), Fraction(0))
        if rest > 0:
            masses[empty_bundle(e.m)] = rest
        lotteries.append(Lottery(masses))
    trace = EatingTrace(tuple(exhausted_at), tuple(rank), tuple(tuple(v) for v in eaten))
    return LotteryAllocation(tuple(lotteries)), trace


def ps(e: Economy) -> tuple[LotteryAllocation, EatingTrace]:
    """Probabilistic serial with unit eating speeds, computed exactly.

    Raises:
        NotUnitDemand: some acceptable bundle has more than one unit.
    """
    if not e.is_unit_demand():
        raise NotUnitDemand("probabilistic serial needs every acceptable bundle to be a single unit")
    return _eat(e)


def ps_to_ceri(e: Economy, trace: EatingTrace) -> tuple[PriceVector, list[BudgetDistribution]]:
    """Descending-clock prices ``1 - exhaustion time`` (0 if never exhausted) and budgets ``U[0, 1]``."""
    if not e.is_unit_demand():
        raise NotUnitDemand("the clock mapping is defined for unit demand")
    prices = tuple(float(1 - t) if t is not None else 0.0 for t in trace.exhausted_at)
    return PriceVector(prices), [BudgetDistribution.uniform(0.0, 1.0)] * e.n


def bps(e: Economy) -> tuple[LotteryAllocation, EatingTrace]:
    """Bundled probabilistic serial: agents eat their best fully available bundle at unit speed."""
    return _eat(e)


def bps_to_ceri(
    e: Economy, trace: EatingTrace, allocation: LotteryAllocation, *, base: int | None = None
) -> tuple[PriceVector, list[BudgetDistribution]]:
    """Prices ``K**-rank`` with ``K = delta + 1`` and budgets uniform on each eaten bundle's demand segment.

    With ``K = delta + 1`` any bundle still available after a good runs out
    costs strictly less than that good alone, so every bundle an agent ate
    owns a nonempty demand segment.  The top segment is unbounded and gets
    ``[cost, cost + 1]``.  ``base`` overrides ``K``; with ``K = delta`` a
    bundle can tie in cost with a better unavailable one and lose its segment.

    Raises:
        ValueError: some eaten bundle has no demand segment at the mapped prices.
    """
    k = base if base is not None else e.delta + 1
    prices = PriceVector(tuple(float(Fraction(1, k**r)) if r is not None else 0.0 for r in trace.rank))
    budgets = []
    for i, agent in enumerate(e.agents):
        profile = demand_profile(agent, prices)
        parts = []
        for x, q in allocation[i].items():
            segs = profile.segments_for(x)
            if not segs:
                raise ValueError(f"agent {i}: bundle {x} has no demand segment at the mapped prices")
            seg = segs[0]
            hi = seg.lo + 1.0 if math.isinf(seg.hi) else seg.hi
            parts.append((float(q), UniformInterval(seg.lo, hi)))
        total = sum(w for w, _ in parts)
        weights = [w / total for w, _ in parts]
        weights[-1] = 1.0 - sum(weights[:-1])
        budgets.append(BudgetDistribution(tuple(zip(weights, (p for _, p in parts)))))
    return prices, budgets


# ---------------------------------------------------------------- dispatch


MECHANISMS = ("ceri-s", "ceri-l", "sd", "rsd", "ps", "bps")


def run_mechanism(
    name: str,
    e: Economy,
    seed: int = 0,
    *,
    epsilon: float | None = None,
    order: Sequence[int] | None = None,
    cfg: SolverConfig | None = None,
) -> MechanismOutcome:
    """Run one of :data:`MECHANISMS` and return its outcome in equilibrium form where one exists."""
    if name == "ceri-s":
        eps = epsilon if epsilon is not None else 0.5 / e.m
        return ceri_s(e, eps, seed, cfg=cfg)
    if name == "ceri-l":
        return ceri_l(e, seed, cfg=cfg)
    if name == "sd":
        order = list(order) if order is not None else list(range(e.n))
        bundles = serial_dictatorship(e, order)
        prices, budgets = sd_to_ceri(e, order, bundles)
        impl = ExPostImplementation((Atom(1.0, tuple(bundles), tuple(b.support_min for b in budgets)),), 0)
        return MechanismOutcome("sd", LotteryAllocation.deterministic(bundles), impl, prices, tuple(budgets), seeds={"seed": seed})
    if name == "rsd":
        return MechanismOutcome("rsd", rsd(e, seed=seed), seeds={"seed": seed})
    if name in ("ps", "bps"):
        alloc, trace = ps(e) if name == "ps" else bps(e)
        prices, budgets = ps_to_ceri(e, trace) if name == "ps" else bps_to_ceri(e, trace, alloc)
        return MechanismOutcome(name, alloc, None, prices, tuple(budgets), seeds={"seed": seed})
    raise ValueError(f"unknown mechanism {name!r}; choose from {', '.join(MECHANISMS)}")


def check_mapping(e: Economy, outcome: MechanismOutcome, tol: float = 1e-6) -> list[str]:
    """Verify that an outcome's prices and budgets make its allocation an equilibrium."""
    if outcome.prices is None or outcome.budgets is None:
        return ["outcome carries no prices"]
    report = verify_ceri(e, list(outcome.budgets), outcome.prices, outcome.allocation, tol)
    if outcome.grid_point is None:
        return report.violations
    # CERI-L clears the rounded-up economy; real agents may leave priced goods unsold
    return [v for v in report.violations if "unsold" not in v]


# ---------------------------------------------------------------- strategyproofness probe


@dataclass(frozen=True)
class SpProbeReport:
    mechanism: str
    samples: int
    truthful: tuple[bool, ...]
    probability: float
    violations: tuple[tuple[int, int, int], ...]  # (omega, agent, misreport index)
    solver_failures: int

    @property
    def stderr(self) -> float:
        k = len(self.truthful)
        return math.sqrt(self.probability * (1 - self.probability) / k) if k else 0.0


def sp_probe(
    e: Economy,
    mechanism: str | Callable[[Economy, int], LotteryAllocation],
    misreports: Mapping[int, Sequence[AgentPreference]] | Sequence[Sequence[AgentPreference]],
    samples: int,
    seed: int = 0,
    *,
    sd_tol: float = SD_TOL,
    cfg: SolverConfig | None = None,
    workers: int = 1,
    grid_types: str = "fixed",
) -> SpProbeReport:
    """Empirical probability that truth-telling sd-dominates every listed misreport for every agent.

    Each sample fixes the mechanism's own randomness (for CERI-L, the grid)
    and reruns the mechanism with one agent's report replaced.  The
    misreported lottery is judged by the agent's true ranking, with bundles
    it finds unacceptable counting as the empty bundle.  For anonymous
    mechanisms agents with the same true type and the same misreport list
    are probed once.  ``workers > 1`` spreads samples over a thread pool;
    results do not depend on it.

    ``grid_types`` only matters for CERI-L.  ``"fixed"`` sizes the grid by the
    union of true and misreported types, so a misreport cannot change the
    grid dimension; ``"reported"`` counts the distinct types in each
    reported profile.
    """
    if grid_types not in ("fixed", "reported"):
        raise ValueError(f"grid_types must be 'fixed' or 'reported', got {grid_types!r}")
    if not isinstance(misreports, Mapping):
        misreports = dict(enumerate(misreports))
    name = mechanism if isinstance(mechanism, str) else getattr(mechanism, "__name__", "custom")
    cfg = cfg or SolverConfig(tol_clearing=1e-10, tol_slackness=1e-10, max_iters=2000)
    run = _probe_runner(e, mechanism, misreports, cfg, grid_types)
    anonymous = mechanism in ("ceri-s", "ceri-l", "ps", "bps", "rsd")
    probes: dict[tuple, int] = {}
    for i, reps in misreports.items():
        key = (e.agents[i].ranked, tuple(r.ranked for r in reps)) if anonymous else (i,)
        probes.setdefault(key, i)

    def one(w: int) -> tuple[bool | None, list[tuple[int, int, int]]]:
        omega = int(np.random.SeedSequence([seed, w]).generate_state(1, dtype=np.uint64)[0])
        cache: dict = {}
        found = []
        try:
            truth = run(e, omega, cache)
            for i in probes.values():
                agent = e.agents[i]
                for r, rep in enumerate(misreports[i]):
                    alt = run(e.with_agents(e.agents[:i] + (rep,) + e.agents[i + 1 :]), omega, cache)
                    if not sd_dominates(agent, truth[i], project_lottery(agent, alt[i], e.m), tol=sd_tol).dominates:
                        found.append((w, i, r))
        except NotConverged:
            return None, []
        return not found, found

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(samples)))
    else:
        results = [one(w) for w in range(samples)]
    flags = [ok for ok, _ in results if ok is not None]
    bad = [v for _, found in results for v in found]
    failures = sum(ok is None for ok, _ in results)
    prob = sum(flags) / len(flags) if flags else float("nan")
    return SpProbeReport(name, samples, tuple(flags), prob, tuple(bad), failures)


def _probe_runner(e, mechanism, misreports, cfg, grid_types) -> Callable[[Economy, int, dict], LotteryAllocation]:
    if callable(mechanism):
        return lambda econ, omega, cache: mechanism(econ, omega)
    if mechanism == "ceri-l" and grid_types == "reported":
        return lambda econ, omega, cache: ceri_l(econ, omega, cfg=cfg, implement=False, cache=cache).allocation
    if mechanism == "ceri-l":
        # a fixed type list keeps the grid dimension the same under every misreport
        universe: list[AgentPreference] = []
        seen = set()
        for a in list(e.agents) + [r for reps in misreports.values() for r in reps]:
            if a.ranked not in seen:
                seen.add(a.ranked)
                universe.append(a)
        return lambda econ, omega, cache: ceri_l(
            econ, omega, type_universe=universe, cfg=cfg, implement=False, cache=cache
        ).allocation
    if mechanism == "ceri-s":
        return lambda econ, omega, cache: ceri_s(econ, 0.5 / econ.m, omega, cfg=cfg, implement=False).allocation
    if mechanism == "ps":
        return lambda econ, omega, cache: ps(econ)[0]
    if mechanism == "bps":
        return lambda econ, omega, cache: bps(econ)[0]
    if mechanism == "rsd":
        return lambda econ, omega, cache: rsd(econ, seed=omega)
    raise ValueError(f"mechanism {mechanism!r} cannot be probed")


def unit_demand_reports(m: int) -> list[AgentPreference]:
    """Every ranking of every subset of single goods (including reporting nothing)."""
    units = [tuple(1 if k == j else 0 for k in range(m)) for j in range(m)]
    out = []
    for size in range(m + 1):
        for perm in itertools.permutations(units, size):
            out.append(AgentPreference(tuple(perm)))
    return out


# ---------------------------------------------------------------- grid statistics


@dataclass(frozen=True)
class GridStats:
    lam: int
    tau: int
    trials: int
    near_hit: np.ndarray  # per coordinate, P(|psi - nearest grid point| <= 1)
    near_hit_theory: float
    near_hit_ci: np.ndarray  # 99% Clopper-Pearson interval per coordinate, shape (tau, 2)
    n: int
    ratio_bound: float
    ratio_hit_rate: float
    ratio_mean: float
    ratio_min: float


def near_hit_frequency(lam: int, psi: Sequence[int], trials: int, rng: np.random.Generator) -> np.ndarray:
    """Per coordinate, fraction of random grids with a point within 1 of ``psi``."""
    psi = np.asarray(psi, dtype=np.int64)
    z = rng.integers(1, lam + 1, size=(trials, len(psi)))
    # nearest point of {z, z + lam, ...} plus the origin
    k = np.maximum(np.round((psi - z) / lam), 0)
    near = np.abs(psi - (z + k * lam))
    for shift in (-1, 1):
        kk = np.maximum(k + shift, 0)
        near = np.minimum(near, np.abs(psi - (z + kk * lam)))
    near = np.minimum(near, np.abs(psi))
    return np.mean(near <= 1, axis=0)


def rounding_ratios(lam: int, probs: Sequence[float], n: int, trials: int, rng: np.random.Generator) -> np.ndarray:
    """``min_t psi^t / psibar^t`` for multinomial type draws rounded up to random grids."""
    probs = np.asarray(probs, dtype=float)
    psi = rng.multinomial(n, probs, size=trials)
    z = rng.integers(1, lam + 1, size=psi.shape)
    up = np.where(psi <= z, z, z + np.ceil((psi - z) / lam) * lam)
    up = np.where(psi == 0, 0, up)
    ratio = np.where(up > 0, psi / np.maximum(up, 1), 1.0)
    return ratio.min(axis=1)


def lemma_threshold(tau: int, p_min: float, eps: float) -> int:
    """Market size ``(8 tau)^2 / (eps^2 p_min^2)`` above which the rounding bound is claimed."""
    return math.ceil((8 * tau) ** 2 / (eps**2 * p_min**2))


def grid_stats(
    lam: int,
    tau: int,
    trials: int,
    seed: int = 0,
    *,
    psi: Sequence[int] | None = None,
    probs: Sequence[float] | None = None,
    n: int | None = None,
    eps: float = 0.5,
) -> GridStats:
    """Monte-Carlo checks of the random grid.

    The near-hit frequency uses a fixed type vector ``psi`` (default: each
    coordinate well away from the origin).  The rounding ratio draws
    ``n`` agents from ``probs`` (default uniform) and compares ``psi/psibar``
    with ``1 - lam / (0.5 p_min n)``; ``n`` defaults to the threshold at
    which that bound is claimed to hold with probability ``1 - eps/2``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rng = np.random.default_rng(seed)
    if psi is None:
        psi = [5 * lam + 2 + t for t in range(tau)]
    near = near_hit_frequency(lam, psi, trials, rng)
    ci = np.array([binomtest(int(round(f * trials)), trials).proportion_ci(0.99) for f in near])
    probs = np.full(tau, 1.0 / tau) if probs is None else np.asarray(probs, dtype=float)
    p_min = float(probs.min())
    n = n if n is not None else lemma_threshold(tau, p_min, eps)
    ratios = rounding_ratios(lam, probs, n, trials, rng)
    bound = 1 - lam / (0.5 * p_min * n)
    return GridStats(
        lam, tau, trials, near, min(1.0, 3 / lam), ci, n, bound,
        float(np.mean(ratios >= bound)), float(ratios.mean()), float(ratios.min()),
    )
