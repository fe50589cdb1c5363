"""Competitive equilibrium from random incomes for combinatorial assignment."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    AgentPreference,
    BudgetDistribution,
    Economy,
    Lottery,
    LotteryAllocation,
    PriceVector,
)
from .equilibrium import SolverConfig, solve_ceri, verify_ceri  # noqa: E402

__all__ = [
    "AgentPreference",
    "BudgetDistribution",
    "Economy",
    "Lottery",
    "LotteryAllocation",
    "PriceVector",
    "SolverConfig",
    "solve_ceri",
    "verify_ceri",
]
