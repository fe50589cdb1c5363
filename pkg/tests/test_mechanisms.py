import math
from fractions import Fraction as F

import numpy as np
import pytest

from ceri.core import AgentPreference, BudgetDistribution, Economy, Lottery, LotteryAllocation
from ceri.decompose import check_implementation
from ceri.equilibrium import verify_ceri
from ceri.errors import NotConverged, NotUnitDemand
from ceri.mechanisms import (
    MECHANISMS,
    RandomGrid,
    bps,
    bps_to_ceri,
    build_grid,
    census,
    ceri_l,
    ceri_l_budget,
    ceri_s,
    check_mapping,
    grid_stats,
    lemma_threshold,
    ps,
    ps_to_ceri,
    round_up,
    rsd,
    run_mechanism,
    sd_to_ceri,
    serial_dictatorship,
    sp_probe,
    unit_demand_reports,
)
from ceri.verify import is_ef1, is_ordinal_envy_free, is_ordinally_efficient

from factories import bm, ex52, random_economy, units

A, B, C, D = units(4)
HALF = F(1, 2)


class TestCeriS:
    def test_ex52_deterministic(self):
        out = ceri_s(ex52(), 0.1, seed=7)
        assert out.allocation[0].prob((1, 0)) == pytest.approx(1)
        assert out.allocation[1].prob((0, 1)) == pytest.approx(1)
        assert len(out.implementation) == 1

    def test_bm_is_efficient_and_envy_free(self):
        e = bm()
        out = ceri_s(e, 0.2, seed=0)
        assert is_ordinally_efficient(e, out.allocation).efficient
        assert is_ordinal_envy_free(e, out.allocation)
        assert not out.allocation[0].close_to(rsd(e)[0], 1e-6)

    def test_single_agent_gets_top_bundle(self):
        e = Economy((1, 1), (AgentPreference(((1, 1), (1, 0))),))
        assert ceri_s(e, 0.25).allocation[0].prob((1, 1)) == pytest.approx(1)

    @pytest.mark.parametrize("eps", [0, 0.5, -0.1])
    def test_epsilon_range(self, eps):
        with pytest.raises(ValueError):
            ceri_s(ex52(), eps)

    def test_deterministic_given_seed(self):
        e = random_economy(np.random.default_rng(3))
        a = ceri_s(e, 0.5 / e.m, seed=11)
        b = ceri_s(e, 0.5 / e.m, seed=11)
        assert tuple(a.prices) == tuple(b.prices)
        assert a.implementation == b.implementation
        assert a.seeds == b.seeds

    def test_random_instances(self):
        rng = np.random.default_rng(5)
        for _ in range(15):
            e = random_economy(rng)
            try:
                out = ceri_s(e, 0.5 / e.m, seed=1)
            except NotConverged:
                continue
            assert is_ordinal_envy_free(e, out.allocation)
            assert is_ef1(e, out.implementation)
            assert check_implementation(e, out.budgets, out.prices, out.allocation, out.implementation) == []


class TestGrid:
    def test_unit_step_is_identity(self):
        grid = build_grid(1, 3, seed=0)
        assert round_up(grid, (0, 4, 17)) == (0, 4, 17)

    def test_zero_stays_zero(self):
        assert round_up(build_grid(5, 2, seed=1), (0, 0)) == (0, 0)

    def test_worked_example(self):
        grid = RandomGrid(4, 1, (3,))
        assert round_up(grid, (5,)) == (7,)
        assert round_up(grid, (3,)) == (3,)
        assert round_up(grid, (1,)) == (3,)
        assert [g for g in range(12) if grid.contains(0, g)] == [0, 3, 7, 11]

    def test_round_up_is_minimal_grid_point(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            lam, tau = int(rng.integers(1, 9)), int(rng.integers(1, 4))
            grid = build_grid(lam, tau, int(rng.integers(1 << 30)))
            psi = rng.integers(0, 30, size=tau)
            up = round_up(grid, psi)
            for t in range(tau):
                assert grid.contains(t, up[t]) and up[t] >= psi[t]
                assert not any(grid.contains(t, g) for g in range(psi[t], up[t]))

    def test_reproducible(self):
        assert build_grid(10, 4, 99) == build_grid(10, 4, 99)

    def test_validation(self):
        with pytest.raises(ValueError):
            RandomGrid(0, 1, (1,))
        with pytest.raises(ValueError):
            RandomGrid(3, 1, (4,))

    def test_saturated_near_hit(self):
        stats = grid_stats(3, 2, 2000, seed=0)
        assert np.all(stats.near_hit == 1.0)
        assert stats.near_hit_theory == 1.0

    def test_lemma_threshold(self):
        assert lemma_threshold(2, 0.5, 0.5) == 4096


class TestCeriL:
    def test_census(self):
        e = bm()
        cen = census(e)
        assert cen.counts == (2, 2) and cen.agent_type == (0, 0, 1, 1)
        with pytest.raises(ValueError):
            census(e, universe=[e.agents[0]])

    def test_budget(self):
        assert ceri_l_budget(1) == BudgetDistribution.uniform(1, 2)
        assert ceri_l_budget(3) == BudgetDistribution.uniform(1, 1.5)

    def test_one_type_sixteen_agents(self):
        agent = AgentPreference(((1,),))
        e = Economy((8,), (agent,) * 16)
        out = ceri_l(e, seed=4)
        assert out.seeds["lambda"] == 4
        (point,) = out.grid_point
        assert 16 <= point <= 19
        # the phantom market clears, so each real agent gets the good w.p. 8 / point
        assert float(out.allocation[0].prob((1,))) == pytest.approx(8 / point, abs=1e-6)
        assert out.solution.residual[0] <= 1e-6

    def test_unit_step_is_an_equilibrium_of_the_real_economy(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            e = random_economy(rng)
            try:
                out = ceri_l(e, seed=2, lam=1)
            except NotConverged:
                continue
            budget = ceri_l_budget(e.delta)
            assert verify_ceri(e, budget, out.prices, out.allocation, tol=1e-5).is_ceri

    def test_single_agent(self):
        e = Economy((1,), (AgentPreference(((1,),)),))
        out = ceri_l(e, seed=0)
        assert out.seeds["lambda"] == 1
        assert out.allocation[0].prob((1,)) == pytest.approx(1)

    def test_envy_free_and_ef1(self):
        rng = np.random.default_rng(12)
        for k in range(10):
            e = random_economy(rng)
            try:
                out = ceri_l(e, seed=k)
            except NotConverged:
                continue
            assert is_ordinal_envy_free(e, out.allocation)
            assert is_ef1(e, out.implementation)
            assert out.implementation.max_overshoot(e) <= max(e.delta - 1, 0)


class TestSerialDictatorship:
    def test_bm_order(self):
        # agents 3 and 4 rank b, a, d, c, so once a and b are gone they take d then c
        assert serial_dictatorship(bm(), [0, 1, 2, 3]) == [A, B, D, C]

    def test_bm_prices(self):
        e = bm()
        bundles = serial_dictatorship(e, [0, 1, 2, 3])
        p, budgets = sd_to_ceri(e, [0, 1, 2, 3], bundles)
        assert tuple(p) == pytest.approx((1, 1 / 2, 1 / 4, 1 / 3))
        assert verify_ceri(e, budgets, p, LotteryAllocation.deterministic(bundles)).is_ceri

    def test_single_agent(self):
        e = Economy((1, 1), (AgentPreference(((1, 1), (1, 0))),))
        assert serial_dictatorship(e, [0]) == [(1, 1)]

    def test_bad_order(self):
        with pytest.raises(ValueError):
            serial_dictatorship(bm(), [0, 0, 1, 2])


class TestRsd:
    def test_bm_marginals(self):
        alloc = rsd(bm())
        for i in (0, 1):
            assert dict(alloc[i].masses) == {A: F(5, 12), C: F(5, 12), B: F(1, 12), D: F(1, 12)}
        for i in (2, 3):
            assert dict(alloc[i].masses) == {B: F(5, 12), D: F(5, 12), A: F(1, 12), C: F(1, 12)}

    def test_bm_inefficient(self):
        assert not is_ordinally_efficient(bm(), rsd(bm())).efficient

    def test_single_agent(self):
        e = Economy((1,), (AgentPreference(((1,),)),))
        assert rsd(e)[0].prob((1,)) == 1

    def test_sums_and_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            e = random_economy(rng, identical=True)
            alloc = rsd(e)
            for lot in alloc:
                assert sum(q for _, q in lot.items()) == 1
                assert lot == alloc[0]

    def test_sampling_fallback(self):
        alloc = rsd(bm(), exact_limit=1, samples=20_000, seed=3)
        assert float(alloc[0].prob(A)) == pytest.approx(5 / 12, abs=0.02)


class TestEating:
    def test_ps_bm(self):
        alloc, trace = ps(bm())
        assert dict(alloc[0].masses) == {A: HALF, C: HALF}
        assert dict(alloc[2].masses) == {B: HALF, D: HALF}
        assert trace.exhausted_at[:2] == (HALF, HALF)

    def test_ps_prices(self):
        e = bm()
        alloc, trace = ps(e)
        p, budgets = ps_to_ceri(e, trace)
        assert tuple(p) == (0.5, 0.5, 0.0, 0.0)
        assert verify_ceri(e, budgets, p, alloc).is_ceri
        assert is_ordinally_efficient(e, alloc).efficient
        assert is_ordinal_envy_free(e, alloc)

    def test_ps_one_agent_one_good(self):
        e = Economy((1,), (AgentPreference(((1,),)),))
        alloc, trace = ps(e)
        assert alloc[0].prob((1,)) == 1
        assert trace.exhausted_at == (F(1),)

    def test_never_exhausted_good_is_free(self):
        e = Economy((2,), (AgentPreference(((1,),)),))
        alloc, trace = ps(e)
        p, _ = ps_to_ceri(e, trace)
        assert tuple(p) == (0.0,)

    def test_ps_rejects_bundles(self):
        with pytest.raises(NotUnitDemand):
            ps(ex52())

    def test_bps_ex52(self):
        e = ex52()
        alloc, trace = bps(e)
        for lot in alloc:
            assert dict(lot.masses) == {(1, 1): HALF, (0, 0): HALF}
        p, budgets = bps_to_ceri(e, trace, alloc)
        assert verify_ceri(e, budgets, p, alloc).is_ceri
        assert is_ordinally_efficient(e, alloc).efficient
        assert alloc != LotteryAllocation.deterministic([(1, 0), (0, 1)])

    def test_bps_single_agent(self):
        e = Economy((1, 1), (AgentPreference(((1, 1), (1, 0))),))
        assert bps(e)[0][0].prob((1, 1)) == 1

    def test_base_delta_can_lose_a_segment(self):
        a, b, c = units(3)
        ab = (1, 1, 0)
        e = Economy((1, 1, 1), (AgentPreference((c, ab)), AgentPreference((c,)), AgentPreference((ab,))))
        alloc, trace = bps(e)
        with pytest.raises(ValueError, match="no demand segment"):
            bps_to_ceri(e, trace, alloc, base=e.delta)
        p, budgets = bps_to_ceri(e, trace, alloc)
        assert verify_ceri(e, budgets, p, alloc).is_ceri

    def test_ps_equals_bps_on_unit_demand(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            e = random_economy(rng, delta_max=1)
            assert ps(e)[0] == bps(e)[0]

    def test_mappings_verify(self):
        rng = np.random.default_rng(7)
        for _ in range(40):
            e = random_economy(rng)
            alloc, trace = bps(e)
            p, budgets = bps_to_ceri(e, trace, alloc)
            assert verify_ceri(e, budgets, p, alloc).is_ceri
            if e.is_unit_demand():
                p, budgets = ps_to_ceri(e, trace)
                assert verify_ceri(e, budgets, p, alloc).is_ceri


@pytest.mark.parametrize("name", MECHANISMS)
def test_run_mechanism_maps_to_equilibrium(name):
    out = run_mechanism(name, bm(), seed=5)
    if name == "rsd":
        assert out.prices is None and check_mapping(bm(), out) == ["outcome carries no prices"]
    else:
        assert check_mapping(bm(), out) == []


def test_run_mechanism_unknown():
    with pytest.raises(ValueError, match="unknown mechanism"):
        run_mechanism("draft", bm())


class TestProbe:
    def test_reports(self):
        assert len(unit_demand_reports(2)) == 5
        assert len(unit_demand_reports(4)) == 65

    def test_single_agent_ceri_l(self):
        e = Economy((1, 1), (AgentPreference(((1, 0), (0, 1))),))
        reps = {0: unit_demand_reports(2)}
        rep = sp_probe(e, "ceri-l", reps, samples=5, grid_types="reported")
        assert rep.probability == 1.0 and rep.solver_failures == 0
        # a grid over all five types rounds the lone agent up to phantom copies of itself
        fixed = sp_probe(e, "ceri-l", reps, samples=5)
        assert fixed.probability < 1.0
        with pytest.raises(ValueError):
            sp_probe(e, "ceri-l", reps, samples=1, grid_types="all")

    def test_ps_on_bm_has_no_profitable_report(self):
        # truth sd-dominates all 65 unit-demand reports for every agent here
        e = bm()
        rep = sp_probe(e, "ps", {i: unit_demand_reports(4) for i in range(4)}, samples=1)
        assert rep.probability == 1.0

    def test_ps_manipulable_profile(self):
        a, b, c = units(3)
        first = AgentPreference((a, b, c))
        e = Economy((1, 1, 1), (first, first, AgentPreference((b, c, a))))
        rep = sp_probe(e, "ps", {0: unit_demand_reports(3)}, samples=1)
        assert rep.probability == 0.0
        assert rep.violations

    def test_threads_do_not_change_results(self):
        e = Economy((2, 2), (AgentPreference((A[:2], B[:2])),) * 4 + (AgentPreference((B[:2], A[:2])),) * 4)
        reps = {i: unit_demand_reports(2) for i in range(8)}
        one = sp_probe(e, "ceri-l", reps, samples=6, seed=1)
        many = sp_probe(e, "ceri-l", reps, samples=6, seed=1, workers=3)
        assert one == many
        assert math.isclose(one.stderr, math.sqrt(one.probability * (1 - one.probability) / 6))

    def test_custom_mechanism(self):
        def fixed(econ, omega):
            return LotteryAllocation((Lottery({(1,): 1}),) * econ.n)

        e = Economy((1,), (AgentPreference(((1,),)),) * 2)
        rep = sp_probe(e, fixed, {0: [AgentPreference(((1,),))]}, samples=2)
        assert rep.mechanism == "fixed" and rep.probability == 1.0
