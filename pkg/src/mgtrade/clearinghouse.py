"""End-to-end coordination of one trading day.

Sequence: feasibility precheck, standalone benchmarks, energy negotiation,
participant selection, surplus computation, payment bargaining, report.
All cross-microgrid communication that the negotiation needs is optionally
recorded as Message objects for audit; schedules themselves never appear in
any message.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass

import numpy as np

from .benchmark import precheck_scenario, solve_benchmark_all
from .domain import PaymentMatrix, Scenario, Schedule, TradeMatrix
from .messages import Message, TraceRecord, summarize
from .payment import NoBargainError, Surplus, run_p2
from .trading import run_p1


@dataclass(frozen=True)
class RunOptions:
    """Knobs for one run; defaults follow the negotiated-protocol defaults."""

    rho1: float = 1.0
    rho2: float = 1.0
    eps1: float | None = None           # default 1e-4 * sqrt(M (M-1) T)
    eps2: float | None = None           # default 1e-6 * M'
    eps_trade: float = 1e-3             # participation threshold on |trade|, kWh
    max_iters_p1: int = 1000
    max_iters_p2: int = 200_000
    rho_schedule: str = "fixed"
    qp_tol: float = 1e-8
    record_messages: bool = True
    parallel: bool = True


@dataclass(frozen=True)
class RunReport:
    """Everything observable about one run."""

    ids: tuple[str, ...]
    benchmark_costs: dict[str, float]
    schedules: dict[str, Schedule]
    trades: TradeMatrix
    social_cost_no_trading: float
    social_cost: float
    per_mg_cost: dict[str, float]
    traders: tuple[str, ...]
    surplus: dict[str, float]           # traders only
    payments: PaymentMatrix             # full id set, zero rows for non-traders
    final_costs: dict[str, float]       # operating cost + net payment
    p1_iterations: int
    p1_converged: bool
    p2_iterations: int
    p2_converged: bool
    residuals_p1: tuple
    residuals_p2: tuple
    messages: tuple[Message, ...]
    wall_clock_seconds: float


def run_algorithm1(scenario: Scenario, options: RunOptions = RunOptions()) -> RunReport:
    """Run the full two-stage negotiation and assemble the report.

    Raises ScenarioError when the scenario is structurally infeasible and
    NoBargainError when trading happened but the total surplus is not
    positive; both carry the offending context.
    """
    t0 = _time.perf_counter()
    precheck_scenario(scenario)
    trace: list[Message] | None = [] if options.record_messages else None

    benchmarks = solve_benchmark_all(scenario, tol=options.qp_tol, parallel=options.parallel)
    bench_costs = {i: benchmarks[i].cost for i in scenario.ids}

    p1 = run_p1(
        scenario,
        rho1=options.rho1,
        eps1=options.eps1,
        max_iters=options.max_iters_p1,
        rho_schedule=options.rho_schedule,
        eps_trade=options.eps_trade,
        qp_tol=options.qp_tol,
        trace=trace,
        parallel=options.parallel,
    )

    traders = p1.traders
    surplus_map = {i: bench_costs[i] - p1.per_mg_cost[i] for i in traders}

    if len(traders) >= 2:
        surplus = Surplus(surplus_map)
        if surplus.total <= 0:
            raise NoBargainError(
                f"traders {list(traders)} have non-positive total surplus "
                f"{surplus.total:.6g}; energy stage produced no collective saving"
            )
        p2 = run_p2(
            surplus,
            rho2=options.rho2,
            eps2=options.eps2,
            max_iters=options.max_iters_p2,
            trace=trace,
        )
        p2_iters, p2_conv, p2_res = p2.iterations, p2.converged, p2.residuals
        trader_payments = p2.payments
    else:
        p2_iters, p2_conv, p2_res = 0, True, ()
        trader_payments = PaymentMatrix.zeros(traders)

    # embed trader payments into the full id set
    full = np.zeros((len(scenario.ids), len(scenario.ids)))
    for a, i in enumerate(trader_payments.ids):
        for b, j in enumerate(trader_payments.ids):
            full[scenario.ids.index(i), scenario.ids.index(j)] = trader_payments.values[a, b]
    payments = PaymentMatrix(scenario.ids, full)

    final_costs = {i: p1.per_mg_cost[i] + payments.net(i) for i in scenario.ids}

    return RunReport(
        ids=scenario.ids,
        benchmark_costs=bench_costs,
        schedules=p1.schedules,
        trades=p1.trades,
        social_cost_no_trading=float(sum(bench_costs.values())),
        social_cost=p1.objective,
        per_mg_cost=p1.per_mg_cost,
        traders=traders,
        surplus=surplus_map,
        payments=payments,
        final_costs=final_costs,
        p1_iterations=p1.iterations,
        p1_converged=p1.converged,
        p2_iterations=p2_iters,
        p2_converged=p2_conv,
        residuals_p1=p1.residuals,
        residuals_p2=p2_res,
        messages=tuple(trace) if trace is not None else (),
        wall_clock_seconds=_time.perf_counter() - t0,
    )


def message_trace(report: RunReport) -> list[TraceRecord]:
    """Per-iteration communication summary (counts and byte estimates only)."""
    return summarize(report.messages)


def report_to_dict(report: RunReport) -> dict:
    """JSON-ready view of the run: the per-microgrid cost table plus totals.
    Schedules and raw messages are left to their dedicated outputs."""
    per_mg = []
    for i in report.ids:
        per_mg.append(
            {
                "id": i,
                "cost_no_trading": report.benchmark_costs[i],
                "cost_with_trading": report.per_mg_cost[i],
                "payment": report.payments.net(i),
                "cost_plus_payment": report.final_costs[i],
                "traded": i in report.traders,
                "surplus": report.surplus.get(i),
            }
        )
    return {
        "microgrids": per_mg,
        "system": {
            "cost_no_trading": report.social_cost_no_trading,
            "cost_with_trading": report.social_cost,
            "total_payment": sum(report.payments.net(i) for i in report.ids),
            "total_saving": report.social_cost_no_trading - report.social_cost,
        },
        "traders": list(report.traders),
        "iterations": {"p1": report.p1_iterations, "p2": report.p2_iterations},
        "converged": {"p1": report.p1_converged, "p2": report.p2_converged},
        "messages": len(report.messages),
        "wall_clock_seconds": report.wall_clock_seconds,
    }
