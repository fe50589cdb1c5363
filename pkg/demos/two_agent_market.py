"""Two agents, two goods, one unit each, random budgets.

Both agents rank a above b.  Each has budget 1 or 2 with equal odds.
We price the market, turn the equilibrium lotteries into a lottery over
deterministic allocations, and check that the result cannot be improved.

    python3 demos/two_agent_market.py
"""

from ceri import AgentPreference, BudgetDistribution, Economy, LotteryAllocation, solve_ceri, verify_ceri
from ceri.demand import bundle_probabilities
from ceri.decompose import build_implementation, check_implementation
from ceri.verify import is_ordinally_efficient

a, b = (1, 0), (0, 1)
pref = AgentPreference((a, b))
economy = Economy((1, 1), (pref, pref), ("a", "b"))
budget = BudgetDistribution.discrete([(1.0, 0.5), (2.0, 0.5)])

# At p = (2, 1) a rich agent buys a, a poor one buys b.
hand = LotteryAllocation(tuple(bundle_probabilities(x, (2.0, 1.0), budget) for x in economy.agents))
print("hand-picked prices (2, 1) clear the market:", verify_ceri(economy, budget, (2.0, 1.0), hand).is_ceri)

# Other prices work too; the solver may land on any of them.
sol = solve_ceri(economy, budget)
print(f"  solver found p = ({sol.prices[0]:.4g}, {sol.prices[1]:.4g}) after {sol.iterations} iterations")
for name, lot in zip("12", sol.allocation):
    print(f"  agent {name}:", {economy.goods[x.index(1)] if any(x) else "nothing": round(float(q), 4) for x, q in lot.items()})
print("  equilibrium check:", verify_ceri(economy, budget, sol.prices, sol.allocation).is_ceri)

impl = build_implementation(economy, budget, sol, seed=1)
print("\nex-post implementation (weight, bundles, budgets):")
for atom in impl.atoms:
    names = ["a" if x == a else "b" if x == b else "-" for x in atom.bundles]
    print(f"  {atom.weight:.3f}  {names}  {[round(v, 3) for v in atom.budgets]}")
print("  problems:", check_implementation(economy, budget, sol.prices, sol.allocation, impl) or "none")

cert = is_ordinally_efficient(economy, sol.allocation)
print("\nordinal efficiency:", cert.verdict, "with supporting prices", [str(p) for p in cert.prices])
