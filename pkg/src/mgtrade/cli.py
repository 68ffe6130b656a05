"""Command line entry points.

Exit codes: 0 on success, 2 for bad input or an infeasible scenario,
3 when a run fails to converge or fails certification.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .benchmark import solve_benchmark_all
from .clearinghouse import RunOptions, report_to_dict, run_algorithm1
from .domain import Scenario, ScenarioError, Schedule, TradeMatrix
from .oracle import centralized_p1, certify
from .payment import NoBargainError
from .scenario_io import generate_scenario, load_scenario, save_scenario
from .trading import residuals_to_csv as p1_residuals_to_csv
from .payment import residuals_to_csv as p2_residuals_to_csv

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_CONVERGENCE = 3


def _write_schedule_csv(
    path: Path,
    mg_id: str,
    scenario: Scenario,
    schedule: Schedule,
    trades: TradeMatrix | None,
) -> None:
    mg = scenario.by_id(mg_id)
    t = scenario.time.slots
    avail = mg.wind_capacity_kw * mg.wind_fraction
    net = trades.net(mg_id) if trades is not None else np.zeros(t)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "t",
                "wind_avail",
                "wind_use",
                "grid_buy",
                "grid_sell",
                "charge",
                "discharge",
                "storage_level",
                "inelastic",
                "elastic_total",
                "net_trade",
            ]
        )
        elastic = schedule.total_elastic_kw
        for k in range(t):
            writer.writerow(
                [
                    k,
                    f"{avail[k]:.6f}",
                    f"{schedule.wind_kw[k]:.6f}",
                    f"{schedule.grid_buy_kw[k]:.6f}",
                    f"{schedule.grid_sell_kw[k]:.6f}",
                    f"{schedule.charge_kw[k]:.6f}",
                    f"{schedule.discharge_kw[k]:.6f}",
                    f"{schedule.storage_level_kwh[k]:.6f}",
                    f"{mg.inelastic_kw[k]:.6f}",
                    f"{elastic[k]:.6f}",
                    f"{net[k]:.6f}",
                ]
            )


def _cmd_gen(args: argparse.Namespace) -> int:
    try:
        scenario = generate_scenario(
            microgrids=args.microgrids, users=args.users, seed=args.seed
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    save_scenario(scenario, args.out)
    print(f"wrote {args.out} ({len(scenario.microgrids)} microgrids, seed {args.seed})")
    return EXIT_OK


def _cmd_benchmark(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
        results = solve_benchmark_all(scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "costs.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mg_id", "cost"])
        for mg_id in scenario.ids:
            writer.writerow([mg_id, f"{results[mg_id].cost:.6f}"])
    for mg_id in scenario.ids:
        _write_schedule_csv(
            out / f"schedule_{mg_id}.csv", mg_id, scenario, results[mg_id].schedule, None
        )
    total = sum(results[mg_id].cost for mg_id in scenario.ids)
    for mg_id in scenario.ids:
        print(f"{mg_id}: cost {results[mg_id].cost:.4f}")
    print(f"total: {total:.4f}")
    print(f"wrote {out}/costs.csv and per-microgrid schedules")
    return EXIT_OK


def _write_table_csv(path: Path, report_dict: dict) -> None:
    rows = report_dict["microgrids"]
    ids = [r["id"] for r in rows]
    fields = ["cost_no_trading", "cost_with_trading", "payment", "cost_plus_payment"]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + ids + ["System"])
        for f in fields:
            total = sum(r[f] for r in rows)
            writer.writerow([f] + [f"{r[f]:.4f}" for r in rows] + [f"{total:.4f}"])


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    kwargs = dict(
        rho1=args.rho1,
        rho2=args.rho2,
        eps1=args.eps1,
        eps2=args.eps2,
        eps_trade=args.eps_trade,
        rho_schedule=args.rho_schedule,
    )
    if args.max_iters is not None:
        kwargs["max_iters_p1"] = args.max_iters
        kwargs["max_iters_p2"] = args.max_iters
    options = RunOptions(**kwargs)
    try:
        report = run_algorithm1(scenario, options)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NoBargainError as exc:
        print(f"no bargain: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report_dict = report_to_dict(report)
    (out / "report.json").write_text(json.dumps(report_dict, indent=2) + "\n")
    _write_table_csv(out / "table.csv", report_dict)
    p1_residuals_to_csv(report.residuals_p1, out / "residuals_p1.csv")
    p2_residuals_to_csv(report.residuals_p2, out / "residuals_p2.csv")
    for mg_id in report.ids:
        _write_schedule_csv(
            out / f"schedule_{mg_id}.csv", mg_id, scenario, report.schedules[mg_id], report.trades
        )

    print(
        f"social cost: {report.social_cost_no_trading:.4f} without trading, "
        f"{report.social_cost:.4f} with trading"
    )
    print(f"traders: {', '.join(report.traders) if report.traders else 'none'}")
    for row in report_dict["microgrids"]:
        print(
            f"{row['id']}: {row['cost_no_trading']:.4f} -> {row['cost_plus_payment']:.4f}"
            f" (payment {row['payment']:+.4f})"
        )
    print(
        f"negotiation: {report.p1_iterations} energy rounds, "
        f"{report.p2_iterations} payment rounds"
    )
    print(f"wrote report to {out}/")

    ok = report.p1_converged and report.p2_converged
    if not report.p1_converged:
        print("warning: energy negotiation did not converge", file=sys.stderr)
    if not report.p2_converged:
        print("warning: payment negotiation did not converge", file=sys.stderr)

    if args.certify:
        try:
            central = centralized_p1(scenario)
        except ScenarioError as exc:
            print(f"certification error: {exc}", file=sys.stderr)
            return EXIT_NO_CONVERGENCE
        cert = certify(report, central)
        for note in cert.notes:
            print(f"certify: {note}")
        print(f"certification: {'PASS' if cert.passed else 'FAIL'}")
        ok = ok and cert.passed

    return EXIT_OK if ok else EXIT_NO_CONVERGENCE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mgtrade",
        description="Cooperative energy trading between interconnected microgrids.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="synthesize a scenario file")
    gen.add_argument("--microgrids", "-m", type=int, default=3)
    gen.add_argument("--users", type=int, default=1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True, help="output scenario JSON path")
    gen.set_defaults(func=_cmd_gen)

    bench = sub.add_parser("benchmark", help="solve each microgrid standalone")
    bench.add_argument("--scenario", type=Path, required=True)
    bench.add_argument("--out", type=Path, required=True, help="output directory")
    bench.set_defaults(func=_cmd_benchmark)

    run = sub.add_parser("run", help="run the full trading and payment negotiation")
    run.add_argument("--scenario", type=Path, required=True)
    run.add_argument("--out", type=Path, required=True, help="output directory")
    run.add_argument("--rho1", type=float, default=1.0)
    run.add_argument("--rho2", type=float, default=1.0)
    run.add_argument("--eps1", type=float, default=None)
    run.add_argument("--eps2", type=float, default=None)
    run.add_argument("--max-iters", type=int, default=None, help="cap for both phases")
    run.add_argument("--rho-schedule", choices=("fixed", "one-over-k"), default="fixed")
    run.add_argument("--eps-trade", type=float, default=1e-3)
    run.add_argument(
        "--certify",
        action="store_true",
        help="cross-check the outcome against a centralized solve",
    )
    run.set_defaults(func=_cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
