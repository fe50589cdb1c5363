"""Command-line entry point.

Every command prints one JSON report to stdout.  Exit codes: 0 success,
1 bad input, 2 a verification failed, 3 the price solver did not converge.
"""

from __future__ import annotations

import argparse
import difflib
import json
import os
import sys
import time
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .core import TOL, BudgetDistribution, Economy, LotteryAllocation
from .decompose import MARGINAL_TOL, build_implementation, check_implementation, decompose_lottery
from .equilibrium import SolverConfig, solve_ceri, verify_ceri
from .errors import CeriError, NotConverged
from .mechanisms import (
    MECHANISMS,
    SD_TOL,
    check_mapping,
    grid_stats,
    run_mechanism,
    sp_probe,
    unit_demand_reports,
)
from .scenario import (
    Scenario,
    budget_to_spec,
    bundle_to_json,
    lottery_to_json,
    number_to_json,
    parse_scenario,
)
from .verify import (
    ALLOCATION_TOL,
    check_certificate,
    ef1_violations,
    envy_pairs,
    is_ordinally_efficient,
    shapley_folkman_select,
)

EXIT_OK, EXIT_INPUT, EXIT_VERIFY, EXIT_SOLVER = 0, 1, 2, 3
CHECKS = ("efficiency", "envy", "ef1", "ceri", "selection")


class _Parser(argparse.ArgumentParser):
    # exit code 2 is reserved for failed verifications
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def data_dir() -> Path:
    return Path(str(resources.files("ceri") / "data"))


def resolve(path: str) -> Path:
    """A scenario path, falling back to the bundled corpus file of the same name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = data_dir() / p.name
    if bundled.exists():
        return bundled
    raise CeriError(f"no such scenario file: {path}")


def threads() -> int:
    try:
        return max(1, int(os.environ.get("CERI_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- report pieces


def _num(v):
    if isinstance(v, (Fraction, int)):
        return number_to_json(v)
    return float(v)


def _prices(e: Economy, p) -> dict[str, Any]:
    return {g: _num(v) for g, v in zip(e.goods, p)}


def _lotteries(e: Economy, alloc: LotteryAllocation) -> list[dict]:
    return [{"agent": a.name, "lottery": lottery_to_json(lot, e.goods)} for a, lot in zip(e.agents, alloc)]


def _atoms(e: Economy, impl) -> list[dict]:
    return [
        {
            "weight": float(a.weight),
            "bundles": [bundle_to_json(x, e.goods) for x in a.bundles],
            "budgets": [float(b) for b in a.budgets],
        }
        for a in impl.atoms
    ]


def _tolerances(cfg: SolverConfig | None = None) -> dict[str, float]:
    out = {"equality": TOL, "marginal": MARGINAL_TOL, "allocation": ALLOCATION_TOL, "sd": SD_TOL}
    if cfg is not None:
        out.update(clearing=cfg.tol_clearing, slackness=cfg.tol_slackness)
    return out


def _solution(e: Economy, sol) -> dict[str, Any]:
    return {
        "prices": _prices(e, sol.prices),
        "price_cap": float(sol.prices.cap),
        "lotteries": _lotteries(e, sol.allocation),
        "residual": [float(v) for v in sol.residual],
        "max_violation": float(sol.max_violation),
        "iterations": int(sol.iterations),
        "restart": int(sol.restart),
        "converged": bool(sol.converged),
    }


def _seed(args, scenario: Scenario | None) -> tuple[int, bool]:
    if getattr(args, "seed", None) is not None:
        return int(args.seed), False
    if scenario is not None and scenario.seed is not None:
        return int(scenario.seed), False
    return int(np.random.SeedSequence().entropy % 2**64), True


def _budgets(scenario: Scenario) -> list[BudgetDistribution]:
    if scenario.budgets is None:
        raise CeriError("scenario has no budgets")
    return list(scenario.budgets)


# ---------------------------------------------------------------- commands


def _solve(args, report: dict) -> int:
    sc = parse_scenario(resolve(args.scenario))
    seed, generated = _seed(args, sc)
    report["seed"] = {"value": seed, "generated": generated}
    cfg = sc.solver_config(seed=seed, max_iters=args.max_iters, damping=args.damping, restarts=args.restarts)
    if args.tol is not None:
        cfg = SolverConfig(**{**cfg.__dict__, "tol_clearing": args.tol, "tol_slackness": args.tol})
    report["tolerances"] = _tolerances(cfg)
    budgets = _budgets(sc)
    try:
        sol = solve_ceri(sc.economy, budgets, cfg)
    except NotConverged as exc:
        report["solution"] = _solution(sc.economy, exc.best)
        report["status"] = "not_converged"
        return EXIT_SOLVER
    report["solution"] = _solution(sc.economy, sol)
    check = verify_ceri(sc.economy, budgets, sol.prices, sol.allocation, max(cfg.tol_clearing, MARGINAL_TOL))
    report["verification"] = {"is_ceri": check.is_ceri, "violations": check.violations}
    if args.command == "implement":
        impl = build_implementation(sc.economy, budgets, sol, seed=seed)
        problems = check_implementation(sc.economy, budgets, sol.prices, sol.allocation, impl)
        report["implementation"] = {
            "kappa": impl.slack_bound,
            "max_overshoot": impl.max_overshoot(sc.economy),
            "atoms": _atoms(sc.economy, impl),
            "violations": problems,
        }
        if problems:
            report["status"] = "verification_failed"
            return EXIT_VERIFY
    if not check.is_ceri:
        report["status"] = "verification_failed"
        return EXIT_VERIFY
    report["status"] = "ok"
    return EXIT_OK


def _verify(args, report: dict) -> int:
    path = args.scenario or args.file
    if path is None:
        raise CeriError("verify needs a scenario file")
    sc = parse_scenario(resolve(path))
    alloc = sc.allocation
    if args.allocation:
        alloc = parse_scenario(resolve(args.allocation)).allocation
    if alloc is None:
        raise CeriError("no allocation given (scenario key 'allocation' or --allocation)")
    e = sc.economy
    report["tolerances"] = _tolerances()
    checks = [c.strip() for c in args.checks.split(",") if c.strip()]
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise CeriError(f"unknown checks {sorted(unknown)}; choose from {', '.join(CHECKS)}")
    results: dict[str, Any] = {}
    failed = False
    for check in checks:
        if check == "efficiency":
            cert = is_ordinally_efficient(e, alloc)
            entry: dict[str, Any] = {"verdict": cert.verdict, "passed": cert.efficient}
            if cert.efficient:
                entry["prices"] = _prices(e, cert.prices)
            else:
                entry["improvement"] = [
                    {
                        "agent": e.agents[s.agent].name,
                        "from": bundle_to_json(s.source, e.goods),
                        "to": bundle_to_json(s.target, e.goods),
                        "mass": _num(s.mass),
                    }
                    for s in cert.improvement
                ]
            entry["certificate_problems"] = check_certificate(e, alloc, cert)
            failed |= not cert.efficient or bool(entry["certificate_problems"])
        elif check == "envy":
            pairs = envy_pairs(e, alloc)
            entry = {"passed": not pairs, "envy": [[e.agents[i].name, e.agents[k].name] for i, k in pairs]}
            failed |= bool(pairs)
        elif check == "ef1":
            atoms = decompose_lottery(e, alloc, tol=MARGINAL_TOL)
            bad = ef1_violations(e, [combo for _, combo in atoms])
            entry = {
                "passed": not bad,
                "atoms": len(atoms),
                "violations": [[w, e.agents[i].name, e.agents[k].name] for w, i, k in bad],
            }
            failed |= bool(bad)
        elif check == "ceri":
            if sc.prices is None or sc.budgets is None:
                entry = {"passed": None, "skipped": "scenario needs both 'prices' and 'budgets'"}
            else:
                rep = verify_ceri(e, list(sc.budgets), sc.prices, alloc)
                entry = {"passed": rep.is_ceri, "violations": rep.violations}
                failed |= not rep.is_ceri
        else:
            sel = shapley_folkman_select(e, alloc)
            chosen = LotteryAllocation.deterministic(sel.bundles)
            entry = {
                "passed": sel.within_bound,
                "bundles": [bundle_to_json(x, e.goods) for x in sel.bundles],
                "l2_excess": sel.excess,
                "diameter": sel.diameter,
                "bound": sel.bound,
                "slack": sel.slack,
                "unit_bound": sel.unit_bound,
                "ties": sel.ties,
                "selected_efficiency": is_ordinally_efficient(e, chosen).verdict,
            }
            failed |= not sel.within_bound
        results[check] = entry
    report["checks"] = results
    report["status"] = "verification_failed" if failed else "ok"
    return EXIT_VERIFY if failed else EXIT_OK


def _run(args, report: dict) -> int:
    sc = parse_scenario(resolve(args.scenario))
    seed, generated = _seed(args, sc)
    report["seed"] = {"value": seed, "generated": generated}
    cfg = sc.solver_config(seed=seed)
    report["tolerances"] = _tolerances(cfg)
    order = [int(k) for k in args.order.split(",")] if args.order else None
    try:
        out = run_mechanism(args.mechanism, sc.economy, seed, epsilon=args.epsilon, order=order, cfg=cfg)
    except NotConverged as exc:
        report["solution"] = _solution(sc.economy, exc.best)
        report["status"] = "not_converged"
        return EXIT_SOLVER
    e = sc.economy
    body: dict[str, Any] = {"mechanism": out.mechanism, "lotteries": _lotteries(e, out.allocation)}
    if out.prices is not None:
        body["prices"] = _prices(e, out.prices)
    if out.budgets is not None:
        body["budgets"] = [budget_to_spec(b) for b in out.budgets]
    if out.grid_point is not None:
        body["grid_point"] = list(out.grid_point)
    body["seeds"] = {k: int(v) for k, v in out.seeds.items()}
    if out.implementation is not None:
        body["atoms"] = _atoms(e, out.implementation)
    problems = check_mapping(e, out) if out.prices is not None else []
    body["equilibrium_check"] = {"checked": out.prices is not None, "violations": problems}
    report["outcome"] = body
    report["status"] = "verification_failed" if problems else "ok"
    return EXIT_VERIFY if problems else EXIT_OK


def _probe(args, report: dict) -> int:
    sc = parse_scenario(resolve(args.scenario))
    seed, generated = _seed(args, sc)
    report["seed"] = {"value": seed, "generated": generated}
    e = sc.economy
    misreports = sc.misreports
    if args.misreports:
        misreports = parse_scenario(resolve(args.misreports)).misreports
    if misreports is None:
        if not e.is_unit_demand():
            raise CeriError("give misreports (--misreports or scenario key) for a multi-unit economy")
        reps = tuple(unit_demand_reports(e.m))
        misreports = {i: reps for i in range(e.n)}
    report["tolerances"] = _tolerances()
    res = sp_probe(e, args.mechanism, misreports, args.samples, seed, workers=threads(), grid_types=args.grid_types)
    report["probe"] = {
        "mechanism": res.mechanism,
        "grid_types": args.grid_types,
        "samples": res.samples,
        "probability": res.probability,
        "stderr": res.stderr,
        "truthful_samples": int(sum(res.truthful)),
        "solver_failures": res.solver_failures,
        "violations": [
            {"sample": w, "agent": e.agents[i].name, "misreport": k} for w, i, k in res.violations
        ],
    }
    report["status"] = "ok"
    return EXIT_OK


def _grid(args, report: dict) -> int:
    seed, generated = _seed(args, None)
    report["seed"] = {"value": seed, "generated": generated}
    g = grid_stats(args.lam, args.tau, args.trials, seed, n=args.n, eps=args.eps)
    report["grid"] = {
        "lambda": g.lam,
        "tau": g.tau,
        "trials": g.trials,
        "near_hit": [float(v) for v in g.near_hit],
        "near_hit_theory": g.near_hit_theory,
        "near_hit_ci99": [[float(lo), float(hi)] for lo, hi in g.near_hit_ci],
        "n": g.n,
        "ratio_bound": g.ratio_bound,
        "ratio_hit_rate": g.ratio_hit_rate,
        "ratio_mean": g.ratio_mean,
        "ratio_min": g.ratio_min,
    }
    report["status"] = "ok"
    return EXIT_OK


def _corpus(args, report: dict) -> int:
    base = Path(args.data_dir) if args.data_dir else data_dir()
    manifest = json.loads((base / "corpus.json").read_text())
    results = []
    failed = False
    for case in manifest["cases"]:
        if args.name and case["name"] not in args.name:
            continue
        code, got = run_command(case["argv"])
        text = dump(got)
        expected_path = base / "expected" / f"{case['name']}.json"
        if args.update:
            expected_path.parent.mkdir(exist_ok=True)
            expected_path.write_text(text)
        want = expected_path.read_text() if expected_path.exists() else ""
        ok = code == case["exit"] and text == want
        entry = {"name": case["name"], "passed": ok, "exit": code}
        if not ok:
            entry["diff"] = "".join(
                difflib.unified_diff(want.splitlines(True), text.splitlines(True), "expected", "actual", n=1)
            )
            if code != case["exit"]:
                entry["expected_exit"] = case["exit"]
        failed |= not ok
        results.append(entry)
    report["cases"] = results
    report["status"] = "verification_failed" if failed else "ok"
    return EXIT_VERIFY if failed else EXIT_OK


# ---------------------------------------------------------------- dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ceri", description="Competitive equilibrium from random incomes: solve, implement, verify.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--timings", action="store_true", help="add wall-clock timings to the report")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("solve-ceri", "compute equilibrium prices"), ("implement", "solve, then build an ex-post implementation")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--scenario", required=True)
        p.add_argument("--tol", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--max-iters", type=int)
        p.add_argument("--damping", type=float)
        p.add_argument("--restarts", type=int)

    p = sub.add_parser("verify", help="check an allocation")
    p.add_argument("file", nargs="?", help="scenario file carrying an allocation")
    p.add_argument("--scenario")
    p.add_argument("--allocation", help="file whose 'allocation' key replaces the scenario's")
    p.add_argument("--checks", default="efficiency,envy,ef1,ceri", help=f"comma list from {', '.join(CHECKS)}")

    p = sub.add_parser("run", help="run a mechanism")
    p.add_argument("--mechanism", required=True, choices=MECHANISMS)
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--order", help="serial dictatorship order as comma-separated agent indices")

    p = sub.add_parser("probe-sp", help="estimate how often truth-telling dominates misreports")
    p.add_argument("--mechanism", required=True, choices=("ceri-s", "ceri-l", "ps", "bps", "rsd"))
    p.add_argument("--scenario", required=True)
    p.add_argument("--misreports")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument(
        "--grid-types",
        choices=("fixed", "reported"),
        default="fixed",
        help="ceri-l grid dimension: all true and misreported types, or the types in each report",
    )
    p.add_argument("--seed", type=int)

    p = sub.add_parser("grid-stats", help="Monte-Carlo statistics of the random grid")
    p.add_argument("--lambda", dest="lam", type=int, required=True)
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, help="market size for the rounding ratio (default: the claimed threshold)")
    p.add_argument("--eps", type=float, default=0.5)

    p = sub.add_parser("corpus", help="replay the bundled examples against stored reports")
    p.add_argument("--name", action="append", help="only these cases")
    p.add_argument("--update", action="store_true", help="rewrite the stored reports")
    p.add_argument("--data-dir", help=argparse.SUPPRESS)
    return parser


HANDLERS = {
    "solve-ceri": _solve,
    "implement": _solve,
    "verify": _verify,
    "run": _run,
    "probe-sp": _probe,
    "grid-stats": _grid,
    "corpus": _corpus,
}


def run_command(argv: Sequence[str]) -> tuple[int, dict]:
    """Parse ``argv``, run the command and return ``(exit code, report)``."""
    args = build_parser().parse_args(list(argv))
    report: dict[str, Any] = {
        "artifact": {"name": "ceri", "version": __version__},
        "command": list(argv),
    }
    start = time.perf_counter()
    try:
        code = HANDLERS[args.command](args, report)
    except CeriError as exc:
        report["status"] = "error"
        report["error"] = {"code": exc.code, "message": str(exc)}
        for key in ("violations", "line", "column"):
            if getattr(exc, key, None) is not None:
                report["error"][key] = getattr(exc, key)
        code = EXIT_INPUT
    if args.timings:
        report["timings"] = {"total_seconds": time.perf_counter() - start}
    return code, report


def dump(report: dict) -> str:
    return json.dumps(report, indent=2) + "\n"


def main(argv: Sequence[str] | None = None) -> int:
    code, report = run_command(sys.argv[1:] if argv is None else argv)
    sys.stdout.write(dump(report))
    return code


if __name__ == "__main__":
    sys.exit(main())
