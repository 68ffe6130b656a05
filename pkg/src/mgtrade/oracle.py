"""Centralized reference solve and run certification.

centralized_p1 stacks every microgrid's schedule plus ordered-pair trade
variables into one QP and solves it directly: the social optimum the
distributed negotiation should reach.  The assembly here is deliberately
written from scratch (its own variable indexing, row construction and
ordering) rather than reusing the per-microgrid template, so a mistake in
the distributed assembly cannot certify itself.

certify compares a finished run against this reference and the closed-form
payment split and returns a machine-checkable verdict.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .domain import Scenario, ScenarioError, Schedule, TradeMatrix, operating_cost
from .payment import Surplus, nbs_payment_oracle
from .qp import QpProblem, solve_qp

if TYPE_CHECKING:  # pragma: no cover
    from .clearinghouse import RunReport

_RIDGE = 1e-8


@dataclass(frozen=True)
class CentralizedSolution:
    schedules: dict[str, Schedule]
    trades: TradeMatrix
    objective: float            # sum of operating costs at the optimum
    kkt_residual: float
    status: str


def centralized_p1(scenario: Scenario, tol: float = 1e-9) -> CentralizedSolution:
    """Solve the social problem with all trades as decision variables."""
    mgs = scenario.microgrids
    ids = scenario.ids
    nmg = len(mgs)
    t = scenario.time.slots
    sh = scenario.time.slot_hours
    prices = scenario.prices

    # variable table: per microgrid seven named blocks, then one block per
    # ordered pair of distinct microgrids
    cursor = 0

    def claim(count: int) -> int:
        nonlocal cursor
        off = cursor
        cursor += count
        return off

    var: dict[tuple, int] = {}
    for a, mg in enumerate(mgs):
        for name in ("g", "qb", "qs"):
            var[(name, a)] = claim(t)
        var[("x", a)] = claim(len(mg.users) * t)
        for name in ("rc", "rd", "s"):
            var[(name, a)] = claim(t)
    for a in range(nmg):
        for b in range(nmg):
            if a != b:
                var[("e", a, b)] = claim(t)
    n = cursor

    pdiag = np.zeros(n)
    q = np.zeros(n)
    lb = np.full(n, 0.0)
    ub = np.full(n, np.inf)
    eq_rows: list[np.ndarray] = []
    eq_rhs: list[float] = []
    g_rows: list[np.ndarray] = []
    g_rhs: list[float] = []

    def row() -> np.ndarray:
        return np.zeros(n)

    for a in range(nmg):
        for b in range(a + 1, nmg):
            oab, oba = var[("e", a, b)], var[("e", b, a)]
            for tt in range(t):
                r = row()
                r[oab + tt] = 1.0
                r[oba + tt] = 1.0
                eq_rows.append(r)
                eq_rhs.append(0.0)
            for off in (oab, oba):
                lb[off: off + t] = -np.inf
                pdiag[off: off + t] = _RIDGE   # trades are cost-free: pin uniqueness

    for a, mg in enumerate(mgs):
        st = mg.storage
        avail = mg.wind_fraction * mg.wind_capacity_kw * sh
        og, oqb, oqs = var[("g", a)], var[("qb", a)], var[("qs", a)]
        ox, orc, ord_, os_ = var[("x", a)], var[("rc", a)], var[("rd", a)], var[("s", a)]

        pdiag[og: og + t] = _RIDGE
        pdiag[os_: os_ + t] = _RIDGE
        q[oqb: oqb + t] = prices.buy
        q[oqs: oqs + t] = -prices.sell
        q[orc: orc + t] = st.cost_per_kwh
        q[ord_: ord_ + t] = st.cost_per_kwh

        ub[og: og + t] = avail
        ub[oqb: oqb + t] = mg.max_buy_kw * sh
        ub[oqs: oqs + t] = mg.max_sell_kw * sh
        ub[orc: orc + t] = st.max_charge_kw * sh
        ub[ord_: ord_ + t] = st.max_discharge_kw * sh
        lb[os_: os_ + t] = st.min_level_kwh
        ub[os_: os_ + t] = st.capacity_kwh

        for k, u in enumerate(mg.users):
            base = ox + k * t
            pdiag[base: base + t] = 2.0 * u.beta
            q[base: base + t] = -2.0 * u.beta * (u.preferred_kw * sh)
            lb[base: base + t] = u.min_kw * sh
            ub[base: base + t] = u.max_kw * sh
            r = row()
            r[base: base + t] = 1.0
            eq_rows.append(r)
            eq_rhs.append(u.total_kwh)

        for tt in range(t):
            # per-slot balance with all of a's incoming trades on the supply side
            r = row()
            r[og + tt] = r[oqb + tt] = r[ord_ + tt] = 1.0
            r[oqs + tt] = r[orc + tt] = -1.0
            for k in range(len(mg.users)):
                r[ox + k * t + tt] = -1.0
            for b in range(nmg):
                if b != a:
                    r[var[("e", a, b)] + tt] = 1.0
            eq_rows.append(r)
            eq_rhs.append(float(mg.inelastic_kw[tt]) * sh)

            r = row()
            r[os_ + tt] = 1.0
            if tt:
                r[os_ + tt - 1] = -1.0
            r[orc + tt] = -st.charge_eff
            r[ord_ + tt] = 1.0 / st.discharge_eff
            eq_rows.append(r)
            eq_rhs.append(st.initial_kwh if tt == 0 else 0.0)

            r = row()
            r[oqs + tt] = 1.0
            r[og + tt] = 1.0
            r[os_ + tt] = -1.0
            g_rows.append(r)
            g_rhs.append(float(avail[tt]))

        r = row()
        r[os_ + t - 1] = 1.0
        eq_rows.append(r)
        eq_rhs.append(st.initial_kwh)

    problem = QpProblem(
        P=np.diag(pdiag), q=q,
        Aeq=np.vstack(eq_rows), beq=np.array(eq_rhs),
        Gineq=np.vstack(g_rows), hineq=np.array(g_rhs),
        lb=lb, ub=ub,
    )
    sol = solve_qp(problem, tol=tol, max_iters=200)
    if sol.status != "optimal":
        raise ScenarioError(
            f"centralized solve ended with status {sol.status!r} "
            f"(kkt residual {sol.kkt_residual:.2e})"
        )

    schedules: dict[str, Schedule] = {}
    for a, mg in enumerate(mgs):
        ox = var[("x", a)]
        schedules[mg.id] = Schedule.from_decisions(
            wind_kw=sol.z[var[("g", a)]: var[("g", a)] + t],
            grid_buy_kw=sol.z[var[("qb", a)]: var[("qb", a)] + t],
            grid_sell_kw=sol.z[var[("qs", a)]: var[("qs", a)] + t],
            elastic_kw=sol.z[ox: ox + len(mg.users) * t].reshape(len(mg.users), t),
            charge_kw=sol.z[var[("rc", a)]: var[("rc", a)] + t],
            discharge_kw=sol.z[var[("rd", a)]: var[("rd", a)] + t],
            storage=mg.storage,
        )
    values = np.zeros((nmg, nmg, t))
    for a in range(nmg):
        for b in range(nmg):
            if a != b:
                off = var[("e", a, b)]
                values[a, b] = sol.z[off: off + t]
    trades = TradeMatrix(ids, values)
    objective = float(sum(operating_cost(schedules[mg.id], mg, prices) for mg in mgs))
    return CentralizedSolution(
        schedules=schedules,
        trades=trades,
        objective=objective,
        kkt_residual=sol.kkt_residual,
        status=sol.status,
    )


@dataclass(frozen=True)
class Certificate:
    passed: bool
    objective_gap_rel: float
    payment_max_err: float
    zero_sum_err: float
    notes: tuple[str, ...]


def certify(
    report: "RunReport",
    central: CentralizedSolution,
    tol_rel: float = 1e-3,
    payment_tol: float = 1e-4,
    zero_sum_tol: float = 1e-9,
    ir_tol: float = 1e-6,
) -> Certificate:
    """Check a run against the centralized objective, the closed-form
    payment split, zero-sum settlement and individual rationality."""
    notes: list[str] = []

    gap = abs(report.social_cost - central.objective) / max(1.0, abs(central.objective))
    if gap > tol_rel:
        notes.append(
            f"social cost {report.social_cost:.6f} vs centralized "
            f"{central.objective:.6f}: relative gap {gap:.3e} > {tol_rel:.0e}"
        )
    if not report.p1_converged:
        notes.append("energy negotiation did not converge")
    if not report.p2_converged:
        notes.append("payment bargaining did not converge")

    nets = {i: report.payments.net(i) for i in report.ids}
    zero_sum = abs(sum(nets.values()))
    if zero_sum > zero_sum_tol:
        notes.append(f"payments sum to {zero_sum:.3e} > {zero_sum_tol:.0e}")

    payment_err = 0.0
    if len(report.traders) >= 2:
        expected = nbs_payment_oracle(Surplus({i: report.surplus[i] for i in report.traders}))
        payment_err = max(abs(nets[i] - expected[i]) for i in report.traders)
        if payment_err > payment_tol:
            notes.append(f"net payments deviate from the bargaining split by {payment_err:.3e}")
    for i in report.ids:
        if i not in report.traders and nets[i] != 0.0:
            notes.append(f"non-trading microgrid {i} has a nonzero payment {nets[i]:.3e}")

    for i in report.ids:
        excess = report.final_costs[i] - report.benchmark_costs[i]
        if excess > ir_tol:
            notes.append(
                f"microgrid {i} ends up {excess:.3e} worse than standalone operation"
            )

    return Certificate(
        passed=not notes,
        objective_gap_rel=gap,
        payment_max_err=payment_err,
        zero_sum_err=zero_sum,
        notes=tuple(notes),
    )
