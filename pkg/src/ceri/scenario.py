"""Scenario files: economies, budgets and allocations in JSON syntax.

A scenario looks like::

    {
      "goods": [{"name": "a", "capacity": 1}, ...],
      "agents": [{"name": "1", "ranked_bundles": [{"a": 1, "b": 1}, {"a": 1}]}, ...],
      "budgets": {"identical": {"uniform": [1, 2]}},
      "seed": 7
    }

Optional keys: ``solver`` (SolverConfig overrides), ``prices`` (list or
``{good: price}``), ``allocation`` (per agent, a list of
``{"bundle": {...}, "prob": p}`` where ``p`` may be a ``"5/12"`` string for an
exact rational) and ``misreports`` (``{agent name: [ranked_bundles, ...]}``).
:func:`emit_scenario` writes the canonical form, which :func:`parse_scenario`
reads back to an equal :class:`Scenario`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

from .core import (
    AgentPreference,
    BudgetDistribution,
    Bundle,
    Economy,
    Lottery,
    LotteryAllocation,
    PointMass,
    UniformInterval,
    validate_economy,
)
from .equilibrium import SolverConfig
from .errors import ParseError, ValidationError

SOLVER_KEYS = ("price_cap", "damping", "tol_clearing", "tol_slackness", "max_iters", "restarts", "newton")


@dataclass(frozen=True)
class Scenario:
    economy: Economy
    budgets: tuple[BudgetDistribution, ...] | None = None
    seed: int | None = None
    solver: Mapping[str, Any] = field(default_factory=dict)
    prices: tuple[float, ...] | None = None
    allocation: LotteryAllocation | None = None
    misreports: Mapping[int, tuple[AgentPreference, ...]] | None = None

    def solver_config(self, **overrides) -> SolverConfig:
        opts = {**self.solver, **{k: v for k, v in overrides.items() if v is not None}}
        if self.seed is not None and "seed" not in opts:
            opts["seed"] = self.seed
        return SolverConfig(**opts)

    @property
    def identical_budgets(self) -> bool:
        return self.budgets is not None and len(set(self.budgets)) <= 1


# ---------------------------------------------------------------- reading


def parse_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario file.

    Raises:
        ParseError: malformed JSON (with line and column) or wrong structure.
        ValidationError: the economy or allocation breaks a model invariant.
    """
    text = Path(path).read_text()
    return parse_scenario_text(text)


def parse_scenario_text(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(raw, dict):
        raise ParseError("top level must be an object", 1, 1)
    return scenario_from_dict(raw)


def _need(raw: Mapping, key: str, kind, where: str):
    if key not in raw:
        raise ParseError(f"{where}: missing key {key!r}")
    value = raw[key]
    if not isinstance(value, kind):
        raise ParseError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}")
    return value


def scenario_from_dict(raw: Mapping[str, Any]) -> Scenario:
    goods_raw = _need(raw, "goods", list, "$")
    names, caps = [], []
    for k, g in enumerate(goods_raw):
        where = f"$.goods[{k}]"
        if not isinstance(g, dict):
            raise ParseError(f"{where}: expected object")
        names.append(str(_need(g, "name", str, where)))
        cap = _need(g, "capacity", int, where)
        caps.append(cap)
    if len(set(names)) != len(names):
        raise ValidationError(["good names must be distinct"])
    index = {name: j for j, name in enumerate(names)}

    agents = []
    for i, a in enumerate(_need(raw, "agents", list, "$")):
        where = f"$.agents[{i}]"
        if not isinstance(a, dict):
            raise ParseError(f"{where}: expected object")
        ranked = tuple(
            _bundle(x, index, f"{where}.ranked_bundles[{k}]") for k, x in enumerate(_need(a, "ranked_bundles", list, where))
        )
        agents.append(AgentPreference(ranked, str(a.get("name", i + 1))))
    if not agents:
        raise ValidationError(["economy has no agents"])
    economy = Economy(tuple(caps), tuple(agents), tuple(names))
    problems = validate_economy(economy)
    if problems:
        raise ValidationError(problems)

    budgets = None
    if "budgets" in raw:
        budgets = _budgets(raw["budgets"], len(agents))
    seed = raw.get("seed")
    if seed is not None and (not isinstance(seed, int) or not 0 <= seed < 2**64):
        raise ParseError("$.seed: expected an unsigned 64-bit integer")
    solver = dict(raw.get("solver", {}))
    unknown = set(solver) - set(SOLVER_KEYS)
    if unknown:
        raise ParseError(f"$.solver: unknown keys {sorted(unknown)}")
    prices = None
    if "prices" in raw:
        pr = raw["prices"]
        if isinstance(pr, dict):
            prices = tuple(float(pr.get(n, 0.0)) for n in names)
        else:
            prices = tuple(float(v) for v in pr)
        if len(prices) != len(names):
            raise ValidationError([f"prices has {len(prices)} entries for {len(names)} goods"])
    allocation = None
    if "allocation" in raw:
        allocation = _allocation(raw["allocation"], index, len(agents))
    misreports = None
    if "misreports" in raw:
        by_name = {a.name: i for i, a in enumerate(agents)}
        misreports = {}
        for name, reps in raw["misreports"].items():
            if name not in by_name:
                raise ValidationError([f"misreports name unknown agent {name!r}"])
            misreports[by_name[name]] = tuple(
                AgentPreference(tuple(_bundle(x, index, f"$.misreports.{name}[{r}]") for x in rep))
                for r, rep in enumerate(reps)
            )
    return Scenario(economy, budgets, seed, solver, prices, allocation, misreports)


def _bundle(raw: Any, index: Mapping[str, int], where: str) -> Bundle:
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: a bundle is an object mapping good names to counts")
    x = [0] * len(index)
    for name, count in raw.items():
        if name not in index:
            raise ValidationError([f"{where}: unknown good {name!r}"])
        if not isinstance(count, int) or count < 0:
            raise ValidationError([f"{where}: count for {name!r} must be a nonnegative integer"])
        x[index[name]] = count
    return tuple(x)


def _piece(raw: Any, where: str):
    if isinstance(raw, dict) and len(raw) == 1:
        (kind, val), = raw.items()
        if kind == "uniform" and isinstance(val, list) and len(val) == 2:
            return UniformInterval(float(val[0]), float(val[1]))
        if kind == "point":
            return PointMass(float(val))
    raise ParseError(f"{where}: expected {{\"uniform\": [lo, hi]}} or {{\"point\": v}}")


def budget_from_spec(raw: Any, where: str = "$.budgets") -> BudgetDistribution:
    if isinstance(raw, dict) and "mixture" in raw:
        parts = []
        for k, comp in enumerate(raw["mixture"]):
            w = f"{where}.mixture[{k}]"
            if not isinstance(comp, dict):
                raise ParseError(f"{w}: expected object")
            parts.append((float(_need(comp, "weight", (int, float), w)), _piece(_need(comp, "piece", dict, w), w)))
        return BudgetDistribution(tuple(parts))
    return BudgetDistribution(((1.0, _piece(raw, where)),))


def _budgets(raw: Any, n: int) -> tuple[BudgetDistribution, ...]:
    if isinstance(raw, dict) and "identical" in raw:
        return (budget_from_spec(raw["identical"], "$.budgets.identical"),) * n
    if isinstance(raw, list):
        if len(raw) != n:
            raise ValidationError([f"{len(raw)} budget distributions for {n} agents"])
        return tuple(budget_from_spec(b, f"$.budgets[{i}]") for i, b in enumerate(raw))
    raise ParseError("$.budgets: expected a list or {\"identical\": spec}")


def _prob(raw: Any, where: str):
    if isinstance(raw, str):
        try:
            return Fraction(raw)
        except ValueError:
            raise ParseError(f"{where}: cannot read {raw!r} as a rational") from None
    if isinstance(raw, (int, float)):
        return raw
    raise ParseError(f"{where}: probability must be a number or a rational string")


def _allocation(raw: Any, index: Mapping[str, int], n: int) -> LotteryAllocation:
    if not isinstance(raw, list) or len(raw) != n:
        raise ValidationError([f"allocation must list one lottery per agent ({n})"])
    lots = []
    for i, entries in enumerate(raw):
        masses: dict[Bundle, Any] = {}
        for k, ent in enumerate(entries):
            where = f"$.allocation[{i}][{k}]"
            x = _bundle(_need(ent, "bundle", dict, where), index, where)
            masses[x] = masses.get(x, 0) + _prob(_need(ent, "prob", (int, float, str), where), where)
        try:
            lots.append(Lottery(masses))
        except ValueError as exc:
            raise ValidationError([f"$.allocation[{i}]: {exc}"]) from None
    return LotteryAllocation(tuple(lots))


# ---------------------------------------------------------------- writing


def bundle_to_json(x: Bundle, goods: Sequence[str]) -> dict[str, int]:
    return {g: int(c) for g, c in zip(goods, x) if c}


def number_to_json(v):
    """Exact rationals become ``"p/q"`` strings; everything else a plain number."""
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else int(v)
    if isinstance(v, int):
        return v
    return float(v)


def budget_to_spec(b: BudgetDistribution) -> dict:
    def piece(p):
        if isinstance(p, PointMass):
            return {"point": p.value}
        return {"uniform": [p.lo, p.hi]}

    if len(b.components) == 1:
        return piece(b.components[0][1])
    return {"mixture": [{"weight": w, "piece": piece(p)} for w, p in b.components]}


def lottery_to_json(lot: Lottery, goods: Sequence[str]) -> list[dict]:
    return [{"bundle": bundle_to_json(x, goods), "prob": number_to_json(q)} for x, q in lot.items()]


def scenario_to_dict(s: Scenario) -> dict:
    e = s.economy
    out: dict[str, Any] = {
        "goods": [{"name": g, "capacity": c} for g, c in zip(e.goods, e.capacities)],
        "agents": [
            {"name": a.name, "ranked_bundles": [bundle_to_json(x, e.goods) for x in a.ranked]} for a in e.agents
        ],
    }
    if s.budgets is not None:
        if s.identical_budgets:
            out["budgets"] = {"identical": budget_to_spec(s.budgets[0])}
        else:
            out["budgets"] = [budget_to_spec(b) for b in s.budgets]
    if s.seed is not None:
        out["seed"] = s.seed
    if s.solver:
        out["solver"] = {k: s.solver[k] for k in SOLVER_KEYS if k in s.solver}
    if s.prices is not None:
        out["prices"] = list(s.prices)
    if s.allocation is not None:
        out["allocation"] = [lottery_to_json(lot, e.goods) for lot in s.allocation]
    if s.misreports is not None:
        out["misreports"] = {
            e.agents[i].name: [[bundle_to_json(x, e.goods) for x in r.ranked] for r in reps]
            for i, reps in sorted(s.misreports.items())
        }
    return out


def emit_scenario(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), indent=2) + "\n"
