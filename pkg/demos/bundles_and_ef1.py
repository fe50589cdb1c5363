"""Bundles: eating versus pricing, EF1, and picking one allocation.

Part one.  Two agents both want {a, b} most, then disagree on singles.
Bundled eating splits the pair by lottery, while CERI-S with tight budgets
gives each agent one single.  Both outcomes are ordinally efficient.

Part two.  Budgets may only spread so far before EF1 breaks.  With two
identical agents who rank two units of a second, budgets U[1, 3] leave an
atom where one agent holds nothing and envies the other's pair.

Part three.  When bundles are large, choosing one support point per agent
can leave a big gap to capacity.

    python3 demos/bundles_and_ef1.py
"""

from fractions import Fraction

from ceri import AgentPreference, BudgetDistribution, Economy, Lottery, LotteryAllocation, solve_ceri
from ceri.decompose import build_implementation
from ceri.mechanisms import bps, bps_to_ceri, ceri_s
from ceri.verify import ef1_violations, is_ordinally_efficient, shapley_folkman_select

ab, a, b = (1, 1), (1, 0), (0, 1)
e = Economy((1, 1), (AgentPreference((ab, a, b)), AgentPreference((ab, b, a))), ("a", "b"))

alloc, trace = bps(e)
p, _ = bps_to_ceri(e, trace, alloc)
print("bundled eating:", [{str(x): str(q) for x, q in lot.items()} for lot in alloc], "prices", tuple(p))
print("  efficient:", is_ordinally_efficient(e, alloc).efficient)
out = ceri_s(e, 0.1, seed=7)
print("CERI-S:", [{str(x): round(float(q), 4) for x, q in lot.items()} for lot in out.allocation])
print("  efficient:", is_ordinally_efficient(e, out.allocation).efficient)

pref = AgentPreference(((1, 1), (2, 0), (0, 1), (1, 0)))
twins = Economy((1, 1), (pref, pref), ("a", "b"))
for hi in (2.0, 3.0):
    budget = BudgetDistribution.uniform(1.0, hi)
    sol = solve_ceri(twins, budget)
    impl = build_implementation(twins, budget, sol, seed=0)
    bad = ef1_violations(twins, impl)
    print(f"\nbudgets U[1, {hi:g}]: {len(impl)} atoms, EF1 violations {len(bad)}")
    for t, i, k in bad:
        print(f"  atom {t}: agent {i + 1} holds {impl.atoms[t].bundles[i]}, agent {k + 1} holds {impl.atoms[t].bundles[k]}")

big = Economy((20,), (AgentPreference(((100,),)),) * 2, ("g",))
lot = Lottery({(0,): Fraction(9, 10), (100,): Fraction(1, 10)})
sel = shapley_folkman_select(big, LotteryAllocation((lot, lot)))
print(f"\n100-unit bundles, 20 units: pick {sel.bundles}, distance {sel.excess:g}, diameter bound {sel.bound:g}")
print("  that pick is efficient:", is_ordinally_efficient(big, LotteryAllocation.deterministic(sel.bundles)).efficient)
