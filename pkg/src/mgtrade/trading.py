"""Distributed negotiation of pairwise energy trades (social-cost stage).

Each iteration has two levels.  Lower level: every microgrid re-solves its
own schedule with trade variables priced by a quadratic penalty around the
last cleared trades plus a dual (price) term; these solves are independent
and run concurrently.  Higher level: the clearing house projects the
proposals onto the antisymmetric set in closed form, pair by pair, and
takes a dual ascent step.  Iterations stop when the summed per-microgrid
distance between proposed and cleared trades falls below eps1.

After the loop, trades below the participation threshold are zeroed and
every microgrid re-solves once against its final cleared net trade, so the
reported schedules satisfy the power balance to solver accuracy and a
microgrid that does not trade reproduces its standalone benchmark exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .benchmark import ScheduleQpTemplate, parallel_map
from .domain import Scenario, ScenarioError, Schedule, TradeMatrix, operating_cost
from .messages import BroadcastEnergy, ProposeEnergy, Terminate
from .qp import solve_qp

RHO_SCHEDULES = ("fixed", "one-over-k", "residual-balance")


@dataclass
class AdmmStateP1:
    """Negotiation state after iteration k (arrays indexed like ids)."""

    ids: tuple[str, ...]
    e: np.ndarray               # (M, M, T) last local proposals
    e_hat: np.ndarray           # (M, M, T) last cleared trades
    lam: np.ndarray             # (M, M, T) duals
    rho1: float
    k: int


def initial_state_p1(scenario: Scenario, rho1: float = 1.0) -> AdmmStateP1:
    m, t = len(scenario.ids), scenario.time.slots
    zeros = lambda: np.zeros((m, m, t))
    return AdmmStateP1(scenario.ids, zeros(), zeros(), zeros(), rho1, 0)


def local_step_p1(
    i: str,
    scenario: Scenario,
    state: AdmmStateP1,
    qp_tol: float = 1e-8,
    template: ScheduleQpTemplate | None = None,
) -> tuple[Schedule, np.ndarray]:
    """One microgrid's best response to the current cleared trades and
    prices.  Returns its schedule and its trade row, shape (M, T) with the
    self column zero.  The schedule stays local; only the row is shared."""
    ids = state.ids
    idx = ids.index(i)
    others = [r for r in range(len(ids)) if r != idx]
    mg = scenario.by_id(i)
    if template is None:
        template = ScheduleQpTemplate(mg, scenario.prices, scenario.time,
                                      n_partners=len(others))
    problem = template.with_trade_duals(
        state.e_hat[idx, others, :], state.lam[idx, others, :], state.rho1
    )
    sol = solve_qp(problem, tol=qp_tol)
    if sol.status != "optimal":
        raise ScenarioError(
            f"microgrid[{i}]: local trading problem ended with status {sol.status!r}"
        )
    row = np.zeros((len(ids), template.slots))
    if others:
        row[others, :] = template.extract_trades(sol.z)
    return template.extract_schedule(sol.z), row


def clearing_update_energy(e: np.ndarray, lam: np.ndarray, rho1: float) -> np.ndarray:
    """Closed-form projection of the trade proposals onto the antisymmetric
    set: per ordered pair,

        e_hat[i,j] = (rho1 * (e[i,j] - e[j,i]) - (lam[i,j] - lam[j,i])) / (2 rho1)

    with e_hat[j,i] set to the exact negation, so cleared antisymmetry is
    bit-identical."""
    if rho1 <= 0:
        raise ValueError("rho1 must be > 0")
    iu, ju = np.triu_indices(e.shape[0], k=1)
    val = (rho1 * (e[iu, ju] - e[ju, iu]) - (lam[iu, ju] - lam[ju, iu])) / (2.0 * rho1)
    e_hat = np.zeros_like(e)
    e_hat[iu, ju] = val
    e_hat[ju, iu] = -val
    return e_hat


def dual_update_energy(lam: np.ndarray, e_hat: np.ndarray, e: np.ndarray, rho1: float) -> np.ndarray:
    """Dual ascent on the consensus gap: lam + rho1 * (e_hat - e)."""
    return lam + rho1 * (e_hat - e)


def select_traders(trades: TradeMatrix, eps_trade: float = 1e-3) -> tuple[str, ...]:
    """Microgrids whose largest cleared trade exceeds eps_trade, in scenario
    order.  Everyone else is treated as not participating."""
    return tuple(i for i in trades.ids if trades.max_abs_trade(i) > eps_trade)


@dataclass(frozen=True)
class P1Result:
    schedules: dict[str, Schedule]
    trades: TradeMatrix                         # cleared, sub-threshold pairs zeroed
    per_mg_cost: dict[str, float]
    objective: float                            # sum of per-microgrid operating costs
    traders: tuple[str, ...]
    iterations: int
    converged: bool
    residuals: tuple[tuple[int, float, float, float], ...]  # (k, primal, dual, objective)


def residuals_to_csv(residuals, path) -> None:
    """Write an iteration log: (iteration, primal_residual, dual_residual, objective)."""
    with open(path, "w") as fh:
        fh.write("iteration,primal_residual,dual_residual,objective\n")
        for row in residuals:
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")


def run_p1(
    scenario: Scenario,
    *,
    rho1: float = 1.0,
    eps1: float | None = None,
    eps_dual: float | None = None,
    max_iters: int = 1000,
    rho_schedule: str = "fixed",
    eps_trade: float = 1e-3,
    qp_tol: float = 1e-8,
    trace=None,
    parallel: bool = True,
) -> P1Result:
    """Run the trade negotiation to convergence (or max_iters, returning the
    last iterate flagged unconverged).

    Stops once the consensus gap sum_i ||e_hat_i - e_i|| falls below eps1
    AND the iterate drift rho1 * ||e_hat(k) - e_hat(k-1)|| falls below
    eps_dual.  The drift test matters: trades carry no curvature of their
    own, so after one dual update every proposal lands exactly on the
    cleared value while the whole iterate still creeps toward the optimum.
    The drift equals half the spread in marginal valuations, independent of
    rho1, so a small threshold certifies that the traded prices agree.
    Both default to 1e-4 * sqrt(M * (M-1) * T)."""
    if rho_schedule not in RHO_SCHEDULES:
        raise ValueError(f"rho_schedule must be one of {RHO_SCHEDULES}")
    if rho1 <= 0:
        raise ValueError("rho1 must be > 0")
    ids = scenario.ids
    m, t = len(ids), scenario.time.slots
    if eps1 is None:
        eps1 = 1e-4 * math.sqrt(m * (m - 1) * t)
    if eps_dual is None:
        eps_dual = 1e-4 * math.sqrt(m * (m - 1) * t)

    templates = [
        ScheduleQpTemplate(mg, scenario.prices, scenario.time, n_partners=m - 1)
        for mg in scenario.microgrids
    ]
    e_hat = np.zeros((m, m, t))
    lam = np.zeros((m, m, t))
    rho_cur = rho1
    history: list[tuple[int, float, float, float]] = []
    converged = False
    iterations = 0

    for k in range(1, max_iters + 1):
        iterations = k
        if rho_schedule == "one-over-k":
            rho_cur = rho1 / k
        state = AdmmStateP1(ids, np.zeros((m, m, t)), e_hat, lam, rho_cur, k)
        if trace is not None:
            trace.append(BroadcastEnergy(e_hat, lam, rho_cur, k))

        results = parallel_map(
            lambda idx: local_step_p1(ids[idx], scenario, state, qp_tol, templates[idx]),
            range(m),
            parallel=parallel,
        )
        e = np.zeros((m, m, t))
        for idx, (_, row) in enumerate(results):
            e[idx] = row
            if trace is not None:
                trace.append(ProposeEnergy(ids[idx], row, k))

        e_hat_new = clearing_update_energy(e, lam, rho_cur)
        lam = dual_update_energy(lam, e_hat_new, e, rho_cur)

        primal = sum(float(np.linalg.norm(e_hat_new[idx] - e[idx])) for idx in range(m))
        dual = rho_cur * float(np.linalg.norm(e_hat_new - e_hat))
        objective = sum(
            operating_cost(sched, mg, scenario.prices)
            for (sched, _), mg in zip(results, scenario.microgrids)
        )
        history.append((k, primal, dual, objective))
        e_hat = e_hat_new

        if primal <= eps1 and dual <= eps_dual:
            converged = True
            break
        if rho_schedule == "residual-balance":
            if primal > 10.0 * dual:
                rho_cur *= 2.0
            elif dual > 10.0 * primal:
                rho_cur *= 0.5

    if trace is not None:
        trace.append(Terminate("p1", "converged" if converged else "max_iters", iterations))

    # participation threshold, then one polishing solve per microgrid against
    # the cleaned cleared trades
    raw = TradeMatrix(ids, e_hat)
    traders = select_traders(raw, eps_trade)
    keep = np.array([i in traders for i in ids], dtype=bool)
    cleaned = np.where(keep[:, None, None] & keep[None, :, None], e_hat, 0.0)
    trades = TradeMatrix(ids, cleaned)
    templates = [ScheduleQpTemplate(mg, scenario.prices, scenario.time)
                 for mg in scenario.microgrids]

    def pin(idx: int):
        net = trades.net(ids[idx]) if keep[idx] else None
        return solve_qp(templates[idx].with_net_trade(net), tol=qp_tol)

    sols = parallel_map(pin, range(m), parallel=parallel)
    bad = [idx for idx in range(m) if sols[idx].status != "optimal"]
    if bad:
        # cleared trades sit within the primal tolerance of each side's own
        # proposal, which leaves them just outside an absorbable set when a
        # microgrid's intake or output is exactly saturated; pull those nets
        # to the closest schedulable point and fold the (tiny) shift back
        # into the trade matrix without breaking antisymmetry
        adjusted = cleaned.copy()
        for idx in bad:
            partners = [j for j in range(m) if keep[j] and j != idx]
            if not keep[idx] or not partners:
                raise ScenarioError(
                    f"microgrid[{ids[idx]}]: final schedule solve ended "
                    f"with status {sols[idx].status!r}"
                )
            tmpl = templates[idx]
            esol = solve_qp(tmpl.with_elastic_net_trade(trades.net(ids[idx])), tol=qp_tol)
            if esol.status != "optimal":
                raise ScenarioError(
                    f"microgrid[{ids[idx]}]: final schedule solve ended "
                    f"with status {esol.status!r}"
                )
            d = tmpl.extract_net_correction(esol.z)
            share = np.abs(adjusted[idx, partners, :])
            tot = share.sum(axis=0)
            share = np.where(tot > 0.0, share / np.where(tot > 0.0, tot, 1.0),
                             1.0 / len(partners))
            delta = share * d[None, :]
            adjusted[idx, partners, :] += delta
            adjusted[partners, idx, :] -= delta
        trades = TradeMatrix(ids, adjusted)
        sols = parallel_map(pin, range(m), parallel=parallel)
        for idx in range(m):
            if sols[idx].status != "optimal":
                raise ScenarioError(
                    f"microgrid[{ids[idx]}]: final schedule solve ended "
                    f"with status {sols[idx].status!r}"
                )

    def finish(idx: int):
        mg = scenario.microgrids[idx]
        sched = templates[idx].extract_schedule(sols[idx].z)
        return sched, operating_cost(sched, mg, scenario.prices)

    polished = [finish(idx) for idx in range(m)]
    schedules = {i: sched for i, (sched, _) in zip(ids, polished)}
    costs = {i: cost for i, (_, cost) in zip(ids, polished)}

    return P1Result(
        schedules=schedules,
        trades=trades,
        per_mg_cost=costs,
        objective=float(sum(costs.values())),
        traders=traders,
        iterations=iterations,
        converged=converged,
        residuals=tuple(history),
    )
