"""Random serial dictatorship against probabilistic serial and CERI-S.

Four agents and four goods: agents 1 and 2 rank a > b > c > d, agents 3
and 4 rank b > a > d > c.  RSD leaves a profitable trade on the table;
the eating mechanism and the equilibrium mechanism do not.

    python3 demos/baselines.py
"""

from ceri import AgentPreference, Economy
from ceri.equilibrium import verify_ceri
from ceri.mechanisms import ceri_s, ps, ps_to_ceri, rsd, sd_to_ceri, serial_dictatorship
from ceri.verify import is_ordinal_envy_free, is_ordinally_efficient

goods = ("a", "b", "c", "d")
a, b, c, d = [tuple(int(k == j) for k in range(4)) for j in range(4)]
first, second = AgentPreference((a, b, c, d)), AgentPreference((b, a, d, c))
e = Economy((1, 1, 1, 1), (first, first, second, second), goods)


def show(alloc):
    for i, lot in enumerate(alloc):
        row = {goods[x.index(1)]: str(q) if not isinstance(q, float) else round(q, 4) for x, q in lot.items() if any(x)}
        print(f"    agent {i + 1}: {row}")


print("RSD (exact over all 24 orders):")
r = rsd(e)
show(r)
cert = is_ordinally_efficient(e, r)
print("  verdict:", cert.verdict)
for s in cert.improvement:
    print(f"    agent {s.agent + 1} moves {s.mass} from {goods[s.source.index(1)]} to {goods[s.target.index(1)]}")

print("\nprobabilistic serial:")
alloc, trace = ps(e)
show(alloc)
p, budgets = ps_to_ceri(e, trace)
print("  clock prices:", dict(zip(goods, tuple(p))))
print("  an equilibrium with budgets U[0,1]:", verify_ceri(e, budgets, p, alloc).is_ceri)
print("  efficient:", is_ordinally_efficient(e, alloc).efficient, " envy-free:", is_ordinal_envy_free(e, alloc))

print("\nCERI-S with budgets U[1, 1.2]:")
out = ceri_s(e, 0.2, seed=0)
show(out.allocation)
print("  efficient:", is_ordinally_efficient(e, out.allocation).efficient, " envy-free:", is_ordinal_envy_free(e, out.allocation))

print("\nserial dictatorship, order 1, 2, 3, 4:")
bundles = serial_dictatorship(e, [0, 1, 2, 3])
p, budgets = sd_to_ceri(e, [0, 1, 2, 3], bundles)
print("  bundles:", [goods[x.index(1)] for x in bundles])
print("  prices:", {g: round(v, 4) for g, v in zip(goods, p)})
