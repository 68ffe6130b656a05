"""Standalone (no-trading) operation of a single microgrid.

This module owns the schedule QP assembly used everywhere a microgrid
optimizes its own dispatch: the no-trading benchmark, the per-iteration
local problems of the trading negotiation (which append trade variables to
the same template), and the final re-solve against cleared trades.  Building
them all from one template keeps the benchmark and the pinned-trades local
problem bit-identical, so a microgrid that ends up not trading reproduces
its benchmark cost exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .domain import (
    GridPrices,
    MicrogridParams,
    Scenario,
    ScenarioError,
    Schedule,
    TimeGrid,
    operating_cost,
)
from .qp import QpProblem, QpSolution, solve_qp

RIDGE = 1e-8  # curvature added to cost-free coordinates so optima are unique


def parallel_map(fn, items, parallel: bool = True) -> list:
    """Map preserving order; per-item work is independent so thread results
    are deterministic."""
    items = list(items)
    if not parallel or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=len(items)) as pool:
        return list(pool.map(fn, items))


def feasibility_precheck(mg: MicrogridParams, time: TimeGrid | None = None) -> None:
    """Reject slots where even maximum supply (all wind + full grid purchase
    + full discharge) cannot cover the must-serve load plus the elastic
    minimums.  Raises ScenarioError naming the slots."""
    t = mg.slots
    sh = (time or TimeGrid(slots=t)).slot_hours
    supply = (mg.wind_fraction * mg.wind_capacity_kw + mg.max_buy_kw
              + mg.storage.max_discharge_kw) * sh
    need = mg.inelastic_kw * sh
    for u in mg.users:
        need = need + u.min_kw * sh
    bad = np.nonzero(need > supply + 1e-9)[0]
    if bad.size:
        raise ScenarioError(
            f"microgrid[{mg.id}]: demand exceeds maximum possible supply "
            f"in slots {bad.tolist()}"
        )


def precheck_scenario(scenario: Scenario) -> None:
    for mg in scenario.microgrids:
        feasibility_precheck(mg, scenario.time)


class ScheduleQpTemplate:
    """Assembled constraint data for one microgrid's schedule QP, with an
    optional block of trade variables (one per partner and slot).

    Variable layout: wind, grid buy, grid sell, elastic (per user), charge,
    discharge, storage level, then trades.  Storage levels stay explicit so
    the usable band is a plain box and the dynamics are equality rows.
    """

    def __init__(
        self,
        mg: MicrogridParams,
        prices: GridPrices,
        time: TimeGrid | None = None,
        n_partners: int = 0,
        ridge: float = RIDGE,
    ) -> None:
        t = mg.slots
        time = time or TimeGrid(slots=t)
        if prices.slots != t:
            raise ScenarioError(f"microgrid[{mg.id}]: prices have {prices.slots} slots, need {t}")
        sh = time.slot_hours
        nu = len(mg.users)
        self.mg = mg
        self.prices = prices
        self.time = time
        self.n_partners = n_partners
        self.slots = t

        def block(k: int) -> slice:
            return slice(k * t, (k + 1) * t)

        self.sl_wind = block(0)
        self.sl_buy = block(1)
        self.sl_sell = block(2)
        self.sl_elastic = slice(3 * t, (3 + nu) * t)      # user n row t at 3t + n*t + t
        self.sl_charge = block(3 + nu)
        self.sl_discharge = block(4 + nu)
        self.sl_level = block(5 + nu)
        self.n_core = (6 + nu) * t
        self.sl_trades = slice(self.n_core, self.n_core + n_partners * t)
        n = self.n_core + n_partners * t
        self.n = n

        avail = mg.wind_fraction * mg.wind_capacity_kw * sh
        self.avail = avail
        st = mg.storage

        # quadratic and linear cost terms; ridge on the cost-free wind and
        # level coordinates keeps the optimum unique and deterministic
        pdiag = np.zeros(n)
        q = np.zeros(n)
        pdiag[self.sl_wind] = ridge
        pdiag[self.sl_level] = ridge
        q[self.sl_buy] = prices.buy
        q[self.sl_sell] = -prices.sell
        q[self.sl_charge] = st.cost_per_kwh
        q[self.sl_discharge] = st.cost_per_kwh
        for k, u in enumerate(mg.users):
            rows = slice(3 * t + k * t, 3 * t + (k + 1) * t)
            pdiag[rows] = 2.0 * u.beta
            q[rows] = -2.0 * u.beta * (u.preferred_kw * sh)
        self.pdiag_base = pdiag
        self.q_base = q

        lb = np.zeros(n)
        ub = np.full(n, np.inf)
        ub[self.sl_wind] = avail
        ub[self.sl_buy] = mg.max_buy_kw * sh
        ub[self.sl_sell] = mg.max_sell_kw * sh
        for k, u in enumerate(mg.users):
            rows = slice(3 * t + k * t, 3 * t + (k + 1) * t)
            lb[rows] = u.min_kw * sh
            ub[rows] = u.max_kw * sh
        ub[self.sl_charge] = st.max_charge_kw * sh
        ub[self.sl_discharge] = st.max_discharge_kw * sh
        lb[self.sl_level] = st.min_level_kwh
        ub[self.sl_level] = st.capacity_kwh
        if n_partners:
            lb[self.sl_trades] = -np.inf
        self.lb, self.ub = lb, ub

        # equalities: user energy totals, storage dynamics, terminal level,
        # then the per-slot supply/demand balance (kept last for rhs edits)
        n_eq = nu + t + 1 + t
        aeq = np.zeros((n_eq, n))
        beq = np.zeros(n_eq)
        row = 0
        for k, u in enumerate(mg.users):
            aeq[row, 3 * t + k * t: 3 * t + (k + 1) * t] = 1.0
            beq[row] = u.total_kwh
            row += 1
        lev0 = self.sl_level.start
        for tt in range(t):
            aeq[row, lev0 + tt] = 1.0
            if tt > 0:
                aeq[row, lev0 + tt - 1] = -1.0
            aeq[row, self.sl_charge.start + tt] = -st.charge_eff
            aeq[row, self.sl_discharge.start + tt] = 1.0 / st.discharge_eff
            beq[row] = st.initial_kwh if tt == 0 else 0.0
            row += 1
        aeq[row, lev0 + t - 1] = 1.0
        beq[row] = st.initial_kwh
        row += 1
        self.balance_rows = slice(row, row + t)
        for tt in range(t):
            aeq[row, self.sl_wind.start + tt] = 1.0
            aeq[row, self.sl_buy.start + tt] = 1.0
            aeq[row, self.sl_discharge.start + tt] = 1.0
            aeq[row, self.sl_sell.start + tt] = -1.0
            aeq[row, self.sl_charge.start + tt] = -1.0
            for k in range(nu):
                aeq[row, 3 * t + k * t + tt] = -1.0
            for pp in range(n_partners):
                aeq[row, self.n_core + pp * t + tt] = 1.0
            beq[row] = mg.inelastic_kw[tt] * sh
            row += 1
        self.aeq = aeq
        self.beq_base = beq

        # surplus-only selling: grid_sell + wind_use - level <= available wind
        g = np.zeros((t, n))
        for tt in range(t):
            g[tt, self.sl_sell.start + tt] = 1.0
            g[tt, self.sl_wind.start + tt] = 1.0
            g[tt, lev0 + tt] = -1.0
        self.gineq = g
        self.hineq = avail.copy()

        for arr in (self.pdiag_base, self.q_base, self.lb, self.ub,
                    self.aeq, self.beq_base, self.gineq, self.hineq):
            arr.flags.writeable = False

    def _finish(self, pdiag: np.ndarray, q: np.ndarray, beq: np.ndarray) -> QpProblem:
        return QpProblem(P=np.diag(pdiag), q=q, Aeq=self.aeq, beq=beq,
                         Gineq=self.gineq, hineq=self.hineq, lb=self.lb, ub=self.ub)

    def with_net_trade(self, net_trade: np.ndarray | None = None) -> QpProblem:
        """Schedule problem with the per-slot net trade pinned (None: zero).
        Only valid on a template built without trade variables."""
        if self.n_partners:
            raise ValueError("template has free trade variables; build one with n_partners=0")
        beq = self.beq_base.copy()
        if net_trade is not None:
            nt = np.asarray(net_trade, dtype=np.float64)
            if nt.shape != (self.slots,):
                raise ValueError(f"net_trade must have shape ({self.slots},)")
            beq[self.balance_rows] -= nt
        return self._finish(self.pdiag_base.copy(), self.q_base.copy(), beq)

    def with_elastic_net_trade(self, net_trade: np.ndarray, weight: float = 100.0) -> QpProblem:
        """Like with_net_trade, but the pin is relaxed by a per-slot
        correction d split into nonnegative halves and charged weight*|d|.
        The exact-penalty weight keeps d at zero whenever the plain pin is
        feasible; otherwise the schedule lands on the nearest absorbable
        net trade and extract_net_correction reports the gap."""
        if self.n_partners:
            raise ValueError("template has free trade variables; build one with n_partners=0")
        t = self.slots
        nc = self.n
        nt = np.asarray(net_trade, dtype=np.float64)
        if nt.shape != (t,):
            raise ValueError(f"net_trade must have shape ({t},)")
        pdiag = np.concatenate([self.pdiag_base, np.full(2 * t, RIDGE)])
        q = np.concatenate([self.q_base, np.full(2 * t, weight)])
        lb = np.concatenate([self.lb, np.zeros(2 * t)])
        ub = np.concatenate([self.ub, np.full(2 * t, np.inf)])
        aeq = np.zeros((self.aeq.shape[0], nc + 2 * t))
        aeq[:, :nc] = self.aeq
        r0 = self.balance_rows.start
        for tt in range(t):
            aeq[r0 + tt, nc + tt] = 1.0
            aeq[r0 + tt, nc + t + tt] = -1.0
        beq = self.beq_base.copy()
        beq[self.balance_rows] -= nt
        gineq = np.zeros((self.gineq.shape[0], nc + 2 * t))
        gineq[:, :nc] = self.gineq
        return QpProblem(P=np.diag(pdiag), q=q, Aeq=aeq, beq=beq,
                         Gineq=gineq, hineq=self.hineq, lb=lb, ub=ub)

    def extract_net_correction(self, z: np.ndarray) -> np.ndarray:
        """Per-slot net-trade adjustment chosen by the elastic pin."""
        t = self.slots
        nc = self.n
        return z[nc: nc + t] - z[nc + t: nc + 2 * t]

    def with_trade_duals(self, e_hat: np.ndarray, lam: np.ndarray, rho: float) -> QpProblem:
        """Local negotiation problem: trades are free variables priced by the
        quadratic penalty rho/2 (e - e_hat)^2 and the dual term -lam e."""
        if e_hat.shape != (self.n_partners, self.slots) or lam.shape != e_hat.shape:
            raise ValueError(f"expected ({self.n_partners}, {self.slots}) dual arrays")
        if rho <= 0:
            raise ValueError("rho must be > 0")
        pdiag = self.pdiag_base.copy()
        q = self.q_base.copy()
        pdiag[self.sl_trades] = rho
        q[self.sl_trades] = -(rho * e_hat + lam).ravel()
        return self._finish(pdiag, q, self.beq_base.copy())

    def extract_schedule(self, z: np.ndarray) -> Schedule:
        t, nu = self.slots, len(self.mg.users)
        return Schedule.from_decisions(
            wind_kw=z[self.sl_wind],
            grid_buy_kw=z[self.sl_buy],
            grid_sell_kw=z[self.sl_sell],
            elastic_kw=z[self.sl_elastic].reshape(nu, t),
            charge_kw=z[self.sl_charge],
            discharge_kw=z[self.sl_discharge],
            storage=self.mg.storage,
        )

    def extract_trades(self, z: np.ndarray) -> np.ndarray:
        return z[self.sl_trades].reshape(self.n_partners, self.slots).copy()


@dataclass(frozen=True)
class BenchmarkResult:
    """Standalone optimum of one microgrid: its schedule and operating cost."""

    schedule: Schedule
    cost: float
    kkt_residual: float


def solve_benchmark(
    mg: MicrogridParams,
    prices: GridPrices,
    time: TimeGrid | None = None,
    tol: float = 1e-8,
) -> BenchmarkResult:
    """Optimal no-trading operation.  The reported cost is operating_cost of
    the extracted schedule, not the solver's internal objective."""
    feasibility_precheck(mg, time)
    template = ScheduleQpTemplate(mg, prices, time)
    problem = template.with_net_trade(None)
    sol = solve_qp(problem, tol=tol)
    if sol.status != "optimal":
        raise ScenarioError(
            f"microgrid[{mg.id}]: benchmark solve ended with status {sol.status!r} "
            f"(kkt residual {sol.kkt_residual:.2e})"
        )
    schedule = template.extract_schedule(sol.z)
    return BenchmarkResult(
        schedule=schedule,
        cost=operating_cost(schedule, mg, prices),
        kkt_residual=sol.kkt_residual,
    )


def solve_benchmark_all(
    scenario: Scenario, tol: float = 1e-8, parallel: bool = True
) -> dict[str, BenchmarkResult]:
    """Benchmarks for every microgrid; the per-microgrid solves are
    independent and run concurrently."""
    results = parallel_map(
        lambda mg: solve_benchmark(mg, scenario.prices, scenario.time, tol),
        scenario.microgrids,
        parallel=parallel,
    )
    return {mg.id: res for mg, res in zip(scenario.microgrids, results)}
