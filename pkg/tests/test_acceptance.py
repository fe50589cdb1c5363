"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (visible without
``-s``) before asserting, so a run of this file doubles as a scorecard::

    pytest tests/test_acceptance.py -v
"""

from __future__ import annotations

import itertools
import math
import time
from fractions import Fraction as F

import numpy as np
import pytest

from ceri.core import AgentPreference, BudgetDistribution, Economy, Lottery, LotteryAllocation, PriceVector
from ceri.decompose import Atom, ExPostImplementation, build_implementation, check_implementation, decompose_lottery
from ceri.demand import bundle_probabilities
from ceri.equilibrium import clearing_violation, solve_ceri, verify_ceri
from ceri.errors import NotConverged
from ceri.mechanisms import bps, ceri_s, grid_stats, lemma_threshold, ps, ps_to_ceri, rsd, sp_probe, unit_demand_reports
from ceri.verify import (
    apply_shifts,
    budgets_from_prices,
    check_certificate,
    ef1_violations,
    envy_pairs,
    is_ordinally_efficient,
    l2_excess,
    sd_dominates,
    shapley_folkman_select,
)

from factories import bm, ef1_counterexample, ex52, exb1, random_economy, sec3, sec3_budget, two_type_unit_demand, units

U12 = BudgetDistribution.uniform(1, 2)


@pytest.fixture
def scorecard(capsys):
    def emit(n: int, ok: bool, detail: str, seconds: float, limit: float):
        within = seconds < limit
        status = "PASS" if ok and within else "FAIL"
        with capsys.disabled():
            print(f"\ncriterion {n}: {status} ({seconds:.2f}s, limit {limit:g}s) {detail}")
        assert within, f"criterion {n} took {seconds:.2f}s (limit {limit}s)"
        assert ok, f"criterion {n}: {detail}"

    return emit


def test_criterion_01_sec3(scorecard):
    t0 = time.perf_counter()
    e, b = sec3(), sec3_budget()
    p = PriceVector((2.0, 1.0), 10.0)
    alloc = LotteryAllocation(tuple(bundle_probabilities(a, p, b) for a in e.agents))
    at_21 = verify_ceri(e, b, p, alloc).is_ceri
    sol = solve_ceri(e, b)
    residual = clearing_violation(sol.prices, sol.residual, sol.prices.cap, 1e-6)
    solved = sol.converged and residual <= 1e-6 and verify_ceri(e, b, sol.prices, sol.allocation).is_ceri
    impls = []
    for atoms in ([((0, 1), (1, 0)), ((1, 0), (0, 1))], [((0, 1), (0, 1)), ((1, 0), (1, 0))]):
        impl = ExPostImplementation(
            tuple(Atom(0.5, combo, tuple(2.0 if x == (1, 0) else 1.0 for x in combo)) for combo in atoms), 1
        )
        impls.append(check_implementation(e, b, p, alloc, impl, kappa=1))
    ok = at_21 and solved and impls == [[], []]
    detail = f"verify at (2,1)={at_21}; solved p={tuple(round(v, 6) for v in sol.prices)} residual={residual:.1e}; implementations ok={impls == [[], []]}"
    scorecard(1, ok, detail, time.perf_counter() - t0, 1.0)


def test_criterion_02_rsd(scorecard):
    t0 = time.perf_counter()
    e = bm()
    alloc = rsd(e)
    a, b, c, d = units(4)
    want_first = {a: F(5, 12), c: F(5, 12), b: F(1, 12), d: F(1, 12)}
    want_second = {b: F(5, 12), d: F(5, 12), a: F(1, 12), c: F(1, 12)}
    exact = all(dict(alloc[i].masses) == (want_first if i < 2 else want_second) for i in range(4))
    cert = is_ordinally_efficient(e, alloc)
    problems = check_certificate(e, alloc, cert)
    shifted = apply_shifts(alloc, cert.improvement) if not cert.efficient else alloc
    strict = sum(sd_dominates(ag, shifted[i], alloc[i]).strict for i, ag in enumerate(e.agents))
    ok = exact and not cert.efficient and not problems and strict >= 1
    detail = f"exact 5/12,1/12={exact}; verdict={cert.verdict}; certificate problems={len(problems)}; strictly improved agents={strict}"
    scorecard(2, ok, detail, time.perf_counter() - t0, 1.0)


def test_criterion_03_ps(scorecard):
    t0 = time.perf_counter()
    e = bm()
    alloc, trace = ps(e)
    a, b, c, d = units(4)
    want = [{a: 0.5, c: 0.5}] * 2 + [{b: 0.5, d: 0.5}] * 2
    err = max(abs(float(alloc[i].prob(x)) - want[i].get(x, 0.0)) for i in range(4) for x in (a, b, c, d))
    p, budgets = ps_to_ceri(e, trace)
    prices_ok = tuple(p) == (0.5, 0.5, 0.0, 0.0)
    verified = verify_ceri(e, budgets, p, alloc).is_ceri
    ok = err <= 1e-12 and prices_ok and verified and budgets[0] == BudgetDistribution.uniform(0, 1)
    detail = f"max marginal error={err:.1e}; p={tuple(p)}; verify with U[0,1]={verified}"
    scorecard(3, ok, detail, time.perf_counter() - t0, 1.0)


def test_criterion_04_bps(scorecard):
    t0 = time.perf_counter()
    e = ex52()
    alloc, _ = bps(e)
    half = all(dict(lot.masses) == {(1, 1): F(1, 2), (0, 0): F(1, 2)} for lot in alloc)
    supports = [sorted((pc.value, w) for w, pc in bd.components) for bd in budgets_from_prices(e, alloc, (1, 1))]
    support_ok = supports == [[(0.0, 0.5), (2.0, 0.5)]] * 2
    det = LotteryAllocation.deterministic([(1, 0), (0, 1)])
    det_ok = verify_ceri(e, BudgetDistribution.point(1), [1.0, 1.0], det).is_ceri
    # eating is deterministic, so vary the only remaining freedom: agent order
    never = all(
        bps(Economy(e.capacities, tuple(e.agents[i] for i in order), e.goods))[0]
        != LotteryAllocation.deterministic([[(1, 0), (0, 1)][i] for i in order])
        for order in itertools.permutations(range(e.n))
    )
    ok = half and support_ok and det_ok and never
    detail = f"{{a,b}} w.p. 1/2={half}; budgets (2 w.p. 1/2, 0 w.p. 1/2)={support_ok}; deterministic CERI at (1,1)={det_ok}; BPS never deterministic={never}"
    scorecard(4, ok, detail, time.perf_counter() - t0, 1.0)


def test_criterion_05_theorem2(scorecard):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    bad_marginals = bad_bound = bvn_bad = fallback = unit = 0
    for _ in range(500):
        e = random_economy(rng)
        try:
            alloc = solve_ceri(e, U12).allocation
        except NotConverged:
            alloc = bps(e)[0]
            fallback += 1
        atoms = decompose_lottery(e, alloc)
        got = [dict() for _ in range(e.n)]
        for w, combo in atoms:
            for i, x in enumerate(combo):
                got[i][x] = got[i].get(x, 0.0) + w
        for i, lot in enumerate(alloc):
            if any(abs(got[i].get(x, 0.0) - float(lot.prob(x))) > 1e-6 for x in set(got[i]) | set(lot.masses)):
                bad_marginals += 1
        over = max(int(np.max(np.sum(combo, axis=0) - np.asarray(e.capacities))) for _, combo in atoms)
        bad_bound += over > e.delta - 1
        if e.delta == 1:
            unit += 1
            bvn_bad += over > 0
    ok = bad_marginals == 0 and bad_bound == 0 and bvn_bad == 0
    detail = f"500 economies ({fallback} via BPS lotteries): marginal mismatches={bad_marginals}, bound violations={bad_bound}; delta=1 sub-corpus {unit} economies, infeasible atoms={bvn_bad}"
    scorecard(5, ok, detail, time.perf_counter() - t0, 120.0)


def test_criterion_06_welfare(scorecard):
    t0 = time.perf_counter()
    rng = np.random.default_rng(606)
    converged = first = second = 0
    for _ in range(200):
        e = random_economy(rng)
        try:
            sol = solve_ceri(e, U12)
        except NotConverged:
            continue
        converged += 1
        cert = is_ordinally_efficient(e, sol.allocation)
        if not cert.efficient or check_certificate(e, sol.allocation, cert):
            first += 1
            continue
        budgets = budgets_from_prices(e, sol.allocation, cert.prices)
        if not verify_ceri(e, budgets, [float(v) for v in cert.prices], sol.allocation).is_ceri:
            second += 1
    ok = first == 0 and second == 0 and converged > 0
    detail = f"{converged}/200 converged; first-welfare failures={first}; second-welfare round-trip failures={second}"
    scorecard(6, ok, detail, time.perf_counter() - t0, 120.0)


def test_criterion_07_theorem5(scorecard):
    t0 = time.perf_counter()
    rng = np.random.default_rng(707)
    runs = envy = ef1 = skipped = 0
    for k in range(200):
        e = random_economy(rng)
        try:
            out = ceri_s(e, 0.5 / e.m, seed=k)
        except NotConverged:
            skipped += 1
            continue
        runs += 1
        envy += bool(envy_pairs(e, out.allocation))
        ef1 += bool(ef1_violations(e, out.implementation))
    # budgets U[1, 3] break the [1, delta/(delta-1)] = [1, 2] condition at delta = 2
    e = ef1_counterexample()
    wide = BudgetDistribution.uniform(1, 3)
    sol = solve_ceri(e, wide)
    counter = ef1_violations(e, build_implementation(e, wide, sol, seed=0))
    ok = envy == 0 and ef1 == 0 and runs > 0 and len(counter) >= 1
    detail = f"{runs} ceri_s runs ({skipped} not converged): envy={envy}, EF1 failures={ef1}; U[1,3] counterexample EF1 failures={len(counter)}"
    scorecard(7, ok, detail, time.perf_counter() - t0, 120.0)


def test_criterion_08_grid(scorecard):
    t0 = time.perf_counter()
    parts = []
    ok = True
    for lam in (10, 100):
        g = grid_stats(lam, 1, 100_000, seed=lam)
        lo, hi = g.near_hit_ci[0]
        inside = lo <= 3 / lam <= hi
        ok &= inside
        parts.append(f"lambda={lam}: freq={g.near_hit[0]:.4f} CI99=[{lo:.4f},{hi:.4f}] vs {3 / lam:.3f}")
    tau, p_min, eps = 2, 0.5, 0.5
    n = lemma_threshold(tau, p_min, eps)
    lam = math.floor(tau * math.sqrt(n))
    g = grid_stats(lam, tau, 10_000, seed=8, n=n, eps=eps)
    ok &= g.ratio_hit_rate >= 1 - eps / 2
    parts.append(f"rounding ratio at n={n}, lambda={lam}: bound {g.ratio_bound:.4f} met in {g.ratio_hit_rate:.4f} of trials (need {1 - eps / 2})")
    scorecard(8, ok, "; ".join(parts), time.perf_counter() - t0, 60.0)


@pytest.mark.slow
def test_criterion_09_uniform_sp(scorecard):
    t0 = time.perf_counter()
    probs, errs = [], []
    for n in (16, 64, 256):
        e = two_type_unit_demand(n)
        reps = unit_demand_reports(2)
        rep = sp_probe(e, "ceri-l", {i: reps for i in range(n)}, samples=200, seed=0)
        probs.append(rep.probability)
        errs.append(rep.stderr)
    monotone = all(probs[k + 1] >= probs[k] - 2 * math.hypot(errs[k], errs[k + 1]) for k in range(2))
    ok = monotone and probs[-1] > 0.9
    detail = "P(truth dominates) at n=16,64,256: " + ", ".join(f"{p:.3f}±{s:.3f}" for p, s in zip(probs, errs))
    scorecard(9, ok, detail, time.perf_counter() - t0, 600.0)


def test_criterion_10_appendix_b(scorecard):
    t0 = time.perf_counter()
    e = exb1()
    grants = [l2_excess(e, [(100,), (0,)]), l2_excess(e, [(0,), (100,)])]
    lot = Lottery({(0,): F(9, 10), (100,): F(1, 10)})
    sel = shapley_folkman_select(e, LotteryAllocation((lot, lot)))
    empty_eff = is_ordinally_efficient(e, LotteryAllocation.deterministic([(0,), (0,)])).efficient
    ok = (
        grants == [80.0, 80.0]
        and sel.bundles == ((0,), (0,))
        and sel.ties == 1
        and sel.excess == 20.0
        and sel.bound == 50.0
        and sel.excess <= sel.bound
        and not empty_eff
    )
    detail = f"grant excess={grants}; selected={sel.bundles} excess={sel.excess} bound={sel.bound} ties={sel.ties}; empty allocation efficient={empty_eff}"
    scorecard(10, ok, detail, time.perf_counter() - t0, 1.0)


# -- criterion 11: exhaustive oracle comparison

_A, _B, _AB = (1, 0), (0, 1), (1, 1)


def _compositions(total: int, parts: int):
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cuts + (total + parts - 1,):
            out.append(c - prev - 1)
            prev = c
        yield out


def _grid(order, units_: int) -> np.ndarray:
    return np.array(list(_compositions(units_, len(order))), dtype=np.int64)


def _tiny_family():
    rankings = [r for k in (1, 2) for r in itertools.permutations((_A, _B, _AB), k)]
    for r1, r2 in itertools.product(rankings, repeat=2):
        yield Economy((1, 1), (AgentPreference(r1), AgentPreference(r2)), ("a", "b"))


def _brute_force_improvable(e: Economy, allocations, fine: int) -> list[bool]:
    """Does some allocation on the ``1/fine`` grid sd-dominate each input (given in 1/fine units)?"""
    orders = [a.with_empty(e.m) for a in e.agents]
    cands = [_grid(o, fine) for o in orders]
    use = [c @ np.asarray(o) for c, o in zip(cands, orders)]
    cum = [np.cumsum(c, axis=1) for c in cands]
    feasible = (use[0][:, None, :] + use[1][None, :, :] <= np.asarray(e.capacities) * fine).all(axis=2)
    out = []
    for rows in allocations:
        weak, strict = [], []
        for i in range(2):
            diff = cum[i] - np.cumsum(rows[i])
            w = (diff >= 0).all(axis=1)
            weak.append(w)
            strict.append(w & (diff > 0).any(axis=1))
        better = feasible & weak[0][:, None] & weak[1][None, :] & (strict[0][:, None] | strict[1][None, :])
        out.append(bool(better.any()))
    return out


def test_criterion_11_oracle(scorecard):
    t0 = time.perf_counter()
    coarse, fine = 4, 12
    total = disagree = 0
    for e in _tiny_family():
        orders = [a.with_empty(e.m) for a in e.agents]
        rows = []
        for l1, l2 in itertools.product(*(_grid(o, coarse) for o in orders)):
            if np.all(l1 @ np.asarray(orders[0]) + l2 @ np.asarray(orders[1]) <= coarse):
                rows.append((l1 * (fine // coarse), l2 * (fine // coarse)))
        brute = _brute_force_improvable(e, rows, fine)
        for (l1, l2), improvable in zip(rows, brute):
            alloc = LotteryAllocation(
                tuple(Lottery({x: F(int(q), fine) for x, q in zip(o, lot) if q}) for o, lot in zip(orders, (l1, l2)))
            )
            total += 1
            disagree += is_ordinally_efficient(e, alloc).efficient == improvable
    ok = disagree == 0 and total > 0
    detail = f"{total} allocations over 81 economies (grid 1/4, search grid 1/{fine}): disagreements={disagree}"
    scorecard(11, ok, detail, time.perf_counter() - t0, 60.0)
