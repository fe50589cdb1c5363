"""Domain types: bundles, ranked preferences, economies, budgets and lotteries.

A bundle is a plain tuple of nonnegative integers, one count per good, so it
hashes and compares by value and can key a lottery directly.  The all-zero
tuple is the outside option; it is never listed explicitly in a ranking and
is always ranked last.

All types are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Iterator, Mapping, Sequence, Union

import numpy as np

Bundle = tuple[int, ...]

# Global equality tolerance for probabilities and prices.
TOL = 1e-9
# Weights of a budget mixture must sum to one within this.
WEIGHT_TOL = 1e-12


def empty_bundle(m: int) -> Bundle:
    return (0,) * m


def unit_bundle(m: int, j: int) -> Bundle:
    return tuple(1 if k == j else 0 for k in range(m))


def bundle_size(x: Bundle) -> int:
    return sum(x)


def is_empty(x: Bundle) -> bool:
    return not any(x)


def remove_one(x: Bundle, j: int) -> Bundle:
    """``(x - e^j)^+``: drop one unit of good ``j`` (no-op if absent)."""
    return tuple(max(c - 1, 0) if k == j else c for k, c in enumerate(x))


@dataclass(frozen=True)
class AgentPreference:
    """Strict ranking over acceptable bundles, most preferred first.

    The empty bundle is implicitly appended as the least preferred element.
    Duplicates and an explicit empty bundle are invariant violations reported
    by :func:`validate_economy`; construction does not reject them.
    """

    ranked: tuple[Bundle, ...]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ranked", tuple(tuple(int(c) for c in x) for x in self.ranked))

    @cached_property
    def _rank(self) -> dict[Bundle, int]:
        ranks: dict[Bundle, int] = {}
        for k, x in enumerate(self.ranked):
            ranks.setdefault(x, k)
        return ranks

    def __len__(self) -> int:
        return len(self.ranked)

    def rank(self, x: Bundle) -> int | None:
        """Position of ``x`` (0 = best); the empty bundle ranks ``len(self)``.

        Returns None for bundles outside the acceptable set.
        """
        r = self._rank.get(tuple(x))
        if r is not None:
            return r
        if is_empty(x):
            return len(self.ranked)
        return None

    def is_acceptable(self, x: Bundle) -> bool:
        return self.rank(x) is not None

    def prefers(self, x: Bundle, y: Bundle) -> bool:
        """Strict preference ``x ≻ y``; both must be acceptable."""
        return self._checked_rank(x) < self._checked_rank(y)

    def weakly_prefers(self, x: Bundle, y: Bundle) -> bool:
        return self._checked_rank(x) <= self._checked_rank(y)

    def _checked_rank(self, x: Bundle) -> int:
        r = self.rank(x)
        if r is None:
            raise KeyError(f"bundle {x} is not acceptable to agent {self.name!r}")
        return r

    def with_empty(self, m: int) -> tuple[Bundle, ...]:
        """Acceptable set including the outside option, best first."""
        return self.ranked + (empty_bundle(m),)

    @property
    def max_size(self) -> int:
        return max((bundle_size(x) for x in self.ranked), default=0)


@dataclass(frozen=True)
class Economy:
    capacities: tuple[int, ...]
    agents: tuple[AgentPreference, ...]
    goods: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "capacities", tuple(int(c) for c in self.capacities))
        object.__setattr__(self, "agents", tuple(self.agents))
        if not self.goods:
            object.__setattr__(self, "goods", tuple(f"g{j}" for j in range(len(self.capacities))))
        else:
            object.__setattr__(self, "goods", tuple(self.goods))

    @property
    def m(self) -> int:
        return len(self.capacities)

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def delta(self) -> int:
        """Largest acceptable bundle size over all agents (0 if none)."""
        return max((a.max_size for a in self.agents), default=0)

    @property
    def capacity_array(self) -> np.ndarray:
        return np.asarray(self.capacities, dtype=float)

    def with_agents(self, agents: Sequence[AgentPreference]) -> "Economy":
        return Economy(self.capacities, tuple(agents), self.goods)

    def is_unit_demand(self) -> bool:
        return all(bundle_size(x) == 1 for a in self.agents for x in a.ranked)


def validate_economy(e: Economy) -> list[str]:
    """Every invariant violation of ``e`` as a message; empty iff well formed."""
    problems: list[str] = []
    if e.m < 1:
        problems.append("economy has no goods")
    if e.n < 1:
        problems.append("economy has no agents")
    if len(e.goods) != e.m:
        problems.append(f"{len(e.goods)} good names for {e.m} capacities")
    elif len(set(e.goods)) != len(e.goods):
        problems.append("duplicate good names")
    for j, c in enumerate(e.capacities):
        if c <= 0:
            problems.append(f"nonpositive capacity {c} for good {e.goods[j] if j < len(e.goods) else j}")
    for i, agent in enumerate(e.agents):
        label = agent.name or f"agent {i}"
        seen: set[Bundle] = set()
        for x in agent.ranked:
            if len(x) != e.m:
                problems.append(f"{label}: bundle {x} has length {len(x)}, expected {e.m}")
                continue
            if any(c < 0 for c in x):
                problems.append(f"{label}: bundle {x} has a negative count")
            if is_empty(x):
                problems.append(f"{label}: empty bundle listed explicitly")
            if x in seen:
                problems.append(f"{label}: duplicate bundle {x}")
            seen.add(x)
    return problems


@dataclass(frozen=True)
class PointMass:
    value: float

    def __post_init__(self):
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ValueError(f"point mass must be finite and >= 0, got {self.value}")


@dataclass(frozen=True)
class UniformInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo < self.hi and math.isfinite(self.hi)):
            raise ValueError(f"uniform interval needs 0 <= lo < hi < inf, got [{self.lo}, {self.hi}]")


Piece = Union[PointMass, UniformInterval]


def _piece_cdf(piece: Piece, t: float, *, strict: bool) -> float:
    if isinstance(piece, PointMass):
        return 1.0 if (piece.value < t if strict else piece.value <= t) else 0.0
    if t <= piece.lo:
        return 0.0
    if t >= piece.hi:
        return 1.0
    return (t - piece.lo) / (piece.hi - piece.lo)


@dataclass(frozen=True)
class BudgetDistribution:
    """Finite mixture of point masses and uniform intervals on ``[0, inf)``."""

    components: tuple[tuple[float, Piece], ...]

    def __post_init__(self):
        comps = tuple((float(w), p) for w, p in self.components)
        if not comps:
            raise ValueError("budget distribution needs at least one component")
        if any(w < 0 for w, _ in comps):
            raise ValueError("mixture weights must be nonnegative")
        total = sum(w for w, _ in comps)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"mixture weights sum to {total}, expected 1")
        object.__setattr__(self, "components", comps)

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "BudgetDistribution":
        return cls(((1.0, UniformInterval(lo, hi)),))

    @classmethod
    def point(cls, value: float) -> "BudgetDistribution":
        return cls(((1.0, PointMass(value)),))

    @classmethod
    def discrete(cls, values: Iterable[tuple[float, float]]) -> "BudgetDistribution":
        """From ``(value, probability)`` pairs."""
        return cls(tuple((float(w), PointMass(float(v))) for v, w in values))

    @property
    def is_continuous(self) -> bool:
        return not any(w > 0 and isinstance(p, PointMass) for w, p in self.components)

    @property
    def support_min(self) -> float:
        return min(p.value if isinstance(p, PointMass) else p.lo for w, p in self.components if w > 0)

    @property
    def support_max(self) -> float:
        return max(p.value if isinstance(p, PointMass) else p.hi for w, p in self.components if w > 0)

    def cdf(self, t: float) -> float:
        """Right-continuous ``P(B <= t)``."""
        return sum(w * _piece_cdf(p, t, strict=False) for w, p in self.components)

    def cdf_left(self, t: float) -> float:
        """``P(B < t)``."""
        return sum(w * _piece_cdf(p, t, strict=True) for w, p in self.components)

    def interval_mass(self, lo: float, hi: float) -> float:
        """``P(lo <= B < hi)``; ``hi`` may be ``inf``."""
        if hi <= lo:
            return 0.0
        upper = 1.0 if math.isinf(hi) else self.cdf_left(hi)
        return upper - self.cdf_left(lo)

    def density(self, t: float) -> float:
        """Density of the continuous part at ``t`` (right limit at kinks)."""
        d = 0.0
        for w, p in self.components:
            if isinstance(p, UniformInterval) and p.lo <= t < p.hi:
                d += w / (p.hi - p.lo)
        return d

    def atoms(self) -> list[tuple[float, float]]:
        """``(value, weight)`` of positive-weight point masses."""
        return [(p.value, w) for w, p in self.components if w > 0 and isinstance(p, PointMass)]

    def restrict(self, lo: float, hi: float) -> "BudgetDistribution":
        """Conditional distribution given ``lo <= B < hi``."""
        parts: list[tuple[float, Piece]] = []
        for w, p in self.components:
            if w <= 0:
                continue
            if isinstance(p, PointMass):
                if lo <= p.value < hi:
                    parts.append((w, p))
            else:
                a, b = max(p.lo, lo), min(p.hi, hi)
                if b > a:
                    parts.append((w * (b - a) / (p.hi - p.lo), UniformInterval(a, b)))
        total = sum(w for w, _ in parts)
        if total <= 0:
            raise ValueError(f"budget distribution has no mass on [{lo}, {hi})")
        # Renormalise so the weights sum to one exactly in floating point.
        weights = [w / total for w, _ in parts]
        weights[-1] = 1.0 - sum(weights[:-1])
        return BudgetDistribution(tuple(zip(weights, (p for _, p in parts))))

    def scaled(self, s: float) -> "BudgetDistribution":
        out: list[tuple[float, Piece]] = []
        for w, p in self.components:
            if isinstance(p, PointMass):
                out.append((w, PointMass(p.value * s)))
            else:
                out.append((w, UniformInterval(p.lo * s, p.hi * s)))
        return BudgetDistribution(tuple(out))

    def sample(self, rng: np.random.Generator, size: int | None = None):
        """Draw budgets; returns a float when ``size`` is None."""
        k = 1 if size is None else size
        weights = np.array([w for w, _ in self.components])
        idx = rng.choice(len(weights), size=k, p=weights / weights.sum())
        u = rng.random(k)
        out = np.empty(k)
        for c, (_, p) in enumerate(self.components):
            mask = idx == c
            if isinstance(p, PointMass):
                out[mask] = p.value
            else:
                out[mask] = p.lo + u[mask] * (p.hi - p.lo)
        return float(out[0]) if size is None else out


def cdf(b: BudgetDistribution, t: float) -> float:
    """Mixture CDF ``P(B <= t)``."""
    return b.cdf(t)


Probability = Union[float, Fraction]


@dataclass(frozen=True)
class Lottery:
    """Finite-support lottery over one agent's acceptable bundles.

    Zero-probability entries are dropped; masses may be floats or Fractions.
    """

    masses: Mapping[Bundle, Probability]

    def __post_init__(self):
        cleaned = {tuple(int(c) for c in x): p for x, p in self.masses.items() if p != 0}
        if any(p < 0 for p in cleaned.values()):
            raise ValueError("lottery probabilities must be nonnegative")
        total = sum(cleaned.values())
        if abs(float(total) - 1.0) > TOL:
            raise ValueError(f"lottery probabilities sum to {float(total)}, expected 1")
        object.__setattr__(self, "masses", cleaned)

    @classmethod
    def point(cls, x: Bundle) -> "Lottery":
        return cls({tuple(x): 1})

    def prob(self, x: Bundle) -> Probability:
        return self.masses.get(tuple(x), 0)

    @property
    def support(self) -> list[Bundle]:
        return list(self.masses)

    def items(self) -> Iterator[tuple[Bundle, Probability]]:
        return iter(self.masses.items())

    def expectation(self, m: int) -> np.ndarray:
        out = np.zeros(m)
        for x, p in self.masses.items():
            out += float(p) * np.asarray(x, dtype=float)
        return out

    def is_degenerate(self) -> bool:
        return len(self.masses) == 1

    def close_to(self, other: "Lottery", tol: float = TOL) -> bool:
        keys = set(self.masses) | set(other.masses)
        return all(abs(float(self.prob(x)) - float(other.prob(x))) <= tol for x in keys)


@dataclass(frozen=True)
class LotteryAllocation:
    per_agent: tuple[Lottery, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_agent", tuple(self.per_agent))

    def __len__(self) -> int:
        return len(self.per_agent)

    def __getitem__(self, i: int) -> Lottery:
        return self.per_agent[i]

    def __iter__(self) -> Iterator[Lottery]:
        return iter(self.per_agent)

    @classmethod
    def deterministic(cls, bundles: Sequence[Bundle]) -> "LotteryAllocation":
        return cls(tuple(Lottery.point(x) for x in bundles))

    def expected_aggregate(self, m: int) -> np.ndarray:
        total = np.zeros(m)
        for lot in self.per_agent:
            total += lot.expectation(m)
        return total

    def is_deterministic(self) -> bool:
        return all(lot.is_degenerate() for lot in self.per_agent)

    def as_bundles(self) -> list[Bundle]:
        if not self.is_deterministic():
            raise ValueError("allocation is not deterministic")
        return [lot.support[0] for lot in self.per_agent]


def validate_allocation(e: Economy, alloc: LotteryAllocation) -> list[str]:
    """Support and length checks for a lottery allocation against ``e``."""
    problems: list[str] = []
    if len(alloc) != e.n:
        problems.append(f"allocation has {len(alloc)} lotteries for {e.n} agents")
        return problems
    for i, (agent, lot) in enumerate(zip(e.agents, alloc)):
        for x in lot.support:
            if len(x) != e.m or not agent.is_acceptable(x):
                problems.append(f"agent {i}: bundle {x} outside the acceptable set")
    return problems


@dataclass(frozen=True)
class PriceVector:
    prices: tuple[float, ...]
    cap: float = math.inf

    def __post_init__(self):
        prices = tuple(float(v) for v in self.prices)
        if any(v < 0 for v in prices):
            raise ValueError("prices must be nonnegative")
        if any(v > self.cap for v in prices):
            raise ValueError(f"prices exceed the cap {self.cap}")
        object.__setattr__(self, "prices", prices)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.prices, dtype=dtype or float)

    def __len__(self) -> int:
        return len(self.prices)

    def __getitem__(self, j: int) -> float:
        return self.prices[j]

    def cost(self, x: Bundle) -> float:
        return float(np.dot(self.prices, x))


def as_prices(p) -> np.ndarray:
    """Coerce a PriceVector or sequence to a float array."""
    return np.asarray(p, dtype=float)

