"""Shared builders: tiny hand-checkable scenarios, a reusable random QP
generator, and independent numerical oracles the tests compare against."""

from __future__ import annotations

import numpy as np

from mgtrade.domain import (
    GridPrices,
    MicrogridParams,
    Scenario,
    StorageParams,
    TimeGrid,
    UserParams,
)
from mgtrade.qp import QpProblem

NO_STORAGE = StorageParams(
    capacity_kwh=0.0, dod=1.0, max_charge_kw=0.0, max_discharge_kw=0.0,
    charge_eff=1.0, discharge_eff=1.0, cost_per_kwh=0.0, initial_kwh=0.0,
)


def flat_prices(slots: int, buy: float = 0.20, sell: float = 0.05) -> GridPrices:
    return GridPrices(buy=np.full(slots, buy), sell=np.full(slots, sell))


def pinned_user(slots: int, kw: float) -> UserParams:
    """User whose load is fully fixed (min == max == preferred)."""
    level = np.full(slots, kw)
    return UserParams(total_kwh=kw * slots, min_kw=level, max_kw=level,
                      preferred_kw=level, beta=0.5)


def complementary_pair(slots: int = 6) -> Scenario:
    """Two microgrids made for each other: one with abundant wind and a
    fixed load, one with no generation and a shiftable load.  The wind-rich
    side earns only the feed-in rate alone; the load-heavy side pays the
    full grid price alone.  Small enough to reason through by hand:

      windy alone:  sells 42.5 kWh/slot at 0.05 -> cost -12.75
      loady alone:  buys 50 kWh/slot at 0.20 and runs its elastic load at
                    10 kW against a 15 kW preference -> cost 210.00
    """
    time = TimeGrid(slots=slots, slot_hours=1.0)
    prices = flat_prices(slots)
    windy = MicrogridParams(
        id="windy", wind_capacity_kw=100.0, wind_fraction=np.full(slots, 1.0),
        max_buy_kw=100.0, max_sell_kw=100.0, inelastic_kw=np.full(slots, 10.0),
        users=(pinned_user(slots, 5.0),), storage=NO_STORAGE,
    )
    loady = MicrogridParams(
        id="loady", wind_capacity_kw=0.0, wind_fraction=np.zeros(slots),
        max_buy_kw=100.0, max_sell_kw=20.0, inelastic_kw=np.full(slots, 40.0),
        users=(UserParams(total_kwh=60.0, min_kw=np.zeros(slots),
                          max_kw=np.full(slots, 20.0),
                          preferred_kw=np.full(slots, 15.0), beta=1.0),),
        storage=NO_STORAGE,
    )
    return Scenario(time=time, prices=prices, microgrids=(windy, loady))


def tiny_mg(slots: int = 1, *, mg_id: str = "m", inelastic: float = 10.0,
            buy: float = 0.1) -> Scenario:
    """One microgrid, one slot by default, no wind, no storage, pinned user
    at zero: the optimum is to buy the inelastic load, cost = buy * load."""
    time = TimeGrid(slots=slots, slot_hours=1.0)
    prices = flat_prices(slots, buy=buy, sell=0.01)
    mg = MicrogridParams(
        id=mg_id, wind_capacity_kw=0.0, wind_fraction=np.zeros(slots),
        max_buy_kw=1000.0, max_sell_kw=0.0, inelastic_kw=np.full(slots, inelastic),
        users=(pinned_user(slots, 0.0),), storage=NO_STORAGE,
    )
    return Scenario(time=time, prices=prices, microgrids=(mg,))


# ---------------------------------------------------------------------------
# random QP instances


def random_qp(rng: np.random.Generator, n: int | None = None) -> QpProblem:
    """Random strictly convex QP guaranteed feasible by construction: a
    reference point z0 is drawn first and every constraint is built to admit
    it (equalities through it, inequalities and bounds with positive slack).
    """
    if n is None:
        n = int(rng.integers(2, 9))
    w = rng.normal(size=(n, n))
    p = w.T @ w + np.eye(n) * rng.uniform(0.1, 1.0)
    q = rng.normal(scale=2.0, size=n)
    z0 = rng.normal(size=n)

    n_eq = int(rng.integers(0, max(1, n // 2) + 1))
    aeq = rng.normal(size=(n_eq, n)) if n_eq else None
    beq = aeq @ z0 if n_eq else None

    n_in = int(rng.integers(0, n + 1))
    gineq = rng.normal(size=(n_in, n)) if n_in else None
    hineq = gineq @ z0 + rng.uniform(0.1, 2.0, n_in) if n_in else None

    lb = z0 - rng.uniform(0.1, 3.0, n)
    ub = z0 + rng.uniform(0.1, 3.0, n)
    # leave some coordinates unbounded on one or both sides
    free = rng.random(n) < 0.3
    lb[free] = -np.inf
    free = rng.random(n) < 0.3
    ub[free] = np.inf
    return QpProblem(P=p, q=q, Aeq=aeq, beq=beq, Gineq=gineq, hineq=hineq,
                     lb=lb, ub=ub)


def hand_qps() -> list[QpProblem]:
    """Small instances with known structure: bound-active, equality-pinned,
    degenerate curvature, and an unconstrained one."""
    return [
        # min z^2 - 2z, unconstrained: z* = 1
        QpProblem(P=[[2.0]], q=[-2.0]),
        # min z^2 s.t. z >= 1: active bound, dual 2
        QpProblem(P=[[2.0]], q=[0.0], lb=[1.0], ub=[np.inf]),
        # min (z-3)^2 s.t. z = 1: equality-pinned
        QpProblem(P=[[2.0]], q=[-6.0], Aeq=[[1.0]], beq=[1.0]),
        # 2-D with one inequality crossing the unconstrained optimum
        QpProblem(P=np.diag([2.0, 2.0]), q=[-4.0, -2.0],
                  Gineq=[[1.0, 1.0]], hineq=[1.5]),
        # zero-curvature coordinate held by bounds only
        QpProblem(P=np.diag([2.0, 0.0]), q=[-2.0, 1.0],
                  lb=[-np.inf, 0.0], ub=[np.inf, 5.0]),
        # coordinate pinned by a zero-width box
        QpProblem(P=np.diag([2.0, 2.0]), q=[0.0, -6.0],
                  lb=[1.0, -np.inf], ub=[1.0, np.inf]),
    ]


def qp_suite(seed: int = 314) -> list[QpProblem]:
    """The 20-instance solver-soundness suite: 6 hand cases + 14 random."""
    rng = np.random.default_rng(seed)
    suite = hand_qps()
    while len(suite) < 20:
        suite.append(random_qp(rng))
    return suite


# ---------------------------------------------------------------------------
# independent oracles


def pair_clearing_oracle(own: float, mirror: float, dual_own: float,
                         dual_mirror: float, rho: float) -> float:
    """Solve the per-pair clearing problem as a raw 3x3 KKT linear system:

        min  rho/2 (x - own)^2 + rho/2 (y - mirror)^2
             + dual_own (x - own) + dual_mirror (y - mirror)
        s.t. x + y = 0

    and return x.  Shares no code with the closed-form updates."""
    kkt = np.array([[rho, 0.0, 1.0],
                    [0.0, rho, 1.0],
                    [1.0, 1.0, 0.0]])
    rhs = np.array([rho * own - dual_own, rho * mirror - dual_mirror, 0.0])
    return float(np.linalg.solve(kkt, rhs)[0])


def projected_gradient_box(p: QpProblem, iters: int = 20000) -> np.ndarray:
    """Projected gradient descent for box-only QPs; slow but independent."""
    if p.Aeq.shape[0] or p.Gineq.shape[0]:
        raise ValueError("box-only oracle")
    lip = float(np.linalg.eigvalsh(p.P)[-1])
    step = 1.0 / max(lip, 1e-12)
    z = np.clip(np.zeros(p.n), p.lb, p.ub)
    for _ in range(iters):
        z = np.clip(z - step * (p.P @ z + p.q), p.lb, p.ub)
    return z


def minimize_bargaining_row(delta, pi_hat_off, gamma_off, rho):
    """Independent minimizer of one trader's payment objective
    -log(delta - sum pi) + gamma.(pi_hat - pi) + rho/2 |pi_hat - pi|^2
    over the off-diagonal row entries: damped Newton, backtracking to keep
    the benefit positive.  The Hessian rho*I + (1/b^2) 11^T inverts by
    Sherman-Morrison."""
    m = len(pi_hat_off)
    x = np.full(m, (delta - 1.0) / m)       # benefit 1.0 at the start
    for _ in range(500):
        b = delta - x.sum()
        g = 1.0 / b - gamma_off + rho * (x - pi_hat_off)
        if np.linalg.norm(g) < 1e-13:
            break
        u = 1.0 / (b * b)
        step = g / rho - (u * g.sum() / (rho * (rho + u * m))) * np.ones(m)
        t = 1.0
        while delta - (x - t * step).sum() <= 0:
            t *= 0.5
        x = x - t * step
    return x
