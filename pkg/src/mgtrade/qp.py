"""Dense convex quadratic programming via a primal-dual interior point method.

Problem form:

    minimize    0.5 z' P z + q' z
    subject to  Aeq z = beq
                Gineq z <= hineq
                lb <= z <= ub        (entries may be -inf / +inf)

The solver is an infeasible-start Mehrotra predictor-corrector with box
bounds handled natively (they contribute only diagonal terms to the reduced
system).  A tiny static regularization keeps the KKT system factorable for
semidefinite P and redundant equalities; it is small enough that reported
residuals still certify the unregularized problem at the default tolerance.

Multiplier conventions, matching kkt_residual below: at an optimum

    P z + q + Aeq' dual_eq + Gineq' dual_ineq + dual_box = 0

with dual_ineq >= 0, dual_box[i] >= 0 only when pushing against ub[i] and
<= 0 only against lb[i].  Deterministic: same problem, same bytes out.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .domain import DimensionError

_INF = np.inf


def _ro(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


def _check_psd(p: np.ndarray) -> None:
    scale = 1.0 + (float(np.max(np.abs(p))) if p.size else 0.0)
    if p.size and float(np.max(np.abs(p - p.T))) > 1e-9 * scale:
        raise ValueError("P must be symmetric")
    if p.size == 0:
        return
    diag = np.diag(p)
    if np.count_nonzero(p) == np.count_nonzero(diag):
        # diagonal matrix
        if float(diag.min(initial=0.0)) < -1e-9 * scale:
            raise ValueError("P must be positive semidefinite")
        return
    gershgorin = diag - (np.abs(p).sum(axis=1) - np.abs(diag))
    if float(gershgorin.min()) >= -1e-9 * scale:
        return
    try:
        np.linalg.cholesky(p + (1e-10 * scale) * np.eye(p.shape[0]))
        return
    except np.linalg.LinAlgError:
        pass
    if float(np.linalg.eigvalsh(p).min()) < -1e-8 * scale:
        raise ValueError("P must be positive semidefinite")


@dataclass(frozen=True)
class QpProblem:
    """Immutable QP instance.  Missing constraint blocks may be passed as
    None; bounds default to free."""

    P: np.ndarray
    q: np.ndarray
    Aeq: np.ndarray | None = None
    beq: np.ndarray | None = None
    Gineq: np.ndarray | None = None
    hineq: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.P, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionError(f"P must be square, got shape {p.shape}")
        n = p.shape[0]
        q = np.asarray(self.q, dtype=np.float64)
        if q.shape != (n,):
            raise DimensionError(f"q must have shape ({n},), got {q.shape}")
        _check_psd(p)
        object.__setattr__(self, "P", _ro(p))
        object.__setattr__(self, "q", _ro(q))

        a = np.zeros((0, n)) if self.Aeq is None else np.asarray(self.Aeq, dtype=np.float64)
        if a.ndim != 2 or a.shape[1] != n:
            raise DimensionError(f"Aeq must have {n} columns, got shape {a.shape}")
        b = np.zeros(0) if self.beq is None else np.asarray(self.beq, dtype=np.float64)
        if b.shape != (a.shape[0],):
            raise DimensionError(f"beq must have shape ({a.shape[0]},), got {b.shape}")
        g = np.zeros((0, n)) if self.Gineq is None else np.asarray(self.Gineq, dtype=np.float64)
        if g.ndim != 2 or g.shape[1] != n:
            raise DimensionError(f"Gineq must have {n} columns, got shape {g.shape}")
        h = np.zeros(0) if self.hineq is None else np.asarray(self.hineq, dtype=np.float64)
        if h.shape != (g.shape[0],):
            raise DimensionError(f"hineq must have shape ({g.shape[0]},), got {h.shape}")
        lb = np.full(n, -_INF) if self.lb is None else np.asarray(self.lb, dtype=np.float64)
        ub = np.full(n, _INF) if self.ub is None else np.asarray(self.ub, dtype=np.float64)
        if lb.shape != (n,) or ub.shape != (n,):
            raise DimensionError(f"lb and ub must have shape ({n},)")
        for name, arr in (("Aeq", a), ("beq", b), ("Gineq", g), ("hineq", h), ("q", q)):
            if arr.size and not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "Aeq", _ro(a))
        object.__setattr__(self, "beq", _ro(b))
        object.__setattr__(self, "Gineq", _ro(g))
        object.__setattr__(self, "hineq", _ro(h))
        object.__setattr__(self, "lb", _ro(lb))
        object.__setattr__(self, "ub", _ro(ub))

    @property
    def n(self) -> int:
        return int(self.P.shape[0])


@dataclass(frozen=True)
class QpSolution:
    z: np.ndarray
    dual_eq: np.ndarray
    dual_ineq: np.ndarray
    dual_box: np.ndarray
    status: str                     # "optimal" | "infeasible" | "max_iters"
    kkt_residual: float
    iterations: int


def kkt_residual(problem: QpProblem, solution: QpSolution) -> float:
    """Worst violation at the given point: primal feasibility, stationarity,
    dual feasibility and complementary slackness, as an infinity norm."""
    p = problem
    z = solution.z
    res = 0.0
    if p.beq.size:
        res = max(res, float(np.max(np.abs(p.Aeq @ z - p.beq))))
    if p.hineq.size:
        slack = p.hineq - p.Gineq @ z
        res = max(res, float(np.max(-np.minimum(slack, 0.0))))
    res = max(res, float(np.max(np.maximum(p.lb - z, 0.0), initial=0.0)))
    res = max(res, float(np.max(np.maximum(z - p.ub, 0.0), initial=0.0)))

    stat = p.P @ z + p.q + solution.dual_box
    if p.beq.size:
        stat = stat + p.Aeq.T @ solution.dual_eq
    if p.hineq.size:
        stat = stat + p.Gineq.T @ solution.dual_ineq
    res = max(res, float(np.max(np.abs(stat))))

    if p.hineq.size:
        res = max(res, float(np.max(-np.minimum(solution.dual_ineq, 0.0))))
        slack = p.hineq - p.Gineq @ z
        res = max(res, float(np.max(np.abs(solution.dual_ineq * slack))))

    db = solution.dual_box
    up = db > 0
    res = max(res, float(np.max(np.where(up & ~np.isfinite(p.ub), db, 0.0), initial=0.0)))
    lo = db < 0
    res = max(res, float(np.max(np.where(lo & ~np.isfinite(p.lb), -db, 0.0), initial=0.0)))
    dist_up = np.where(np.isfinite(p.ub), p.ub - z, 0.0)
    dist_lo = np.where(np.isfinite(p.lb), z - p.lb, 0.0)
    gap_up = np.where(up, np.abs(db * dist_up), 0.0)
    gap_lo = np.where(lo, np.abs(db * dist_lo), 0.0)
    res = max(res, float(np.max(gap_up, initial=0.0)), float(np.max(gap_lo, initial=0.0)))
    return res


def objective_value(problem: QpProblem, z: np.ndarray) -> float:
    return float(0.5 * z @ (problem.P @ z) + problem.q @ z)


def _pack(p, z, y, w_g, il, w_l, iu, w_u, status, iters) -> QpSolution:
    dual_box = np.zeros(p.n)
    np.subtract.at(dual_box, il, w_l)
    np.add.at(dual_box, iu, w_u)
    sol = QpSolution(
        z=_ro(z.copy()), dual_eq=_ro(y.copy()), dual_ineq=_ro(w_g.copy()),
        dual_box=_ro(dual_box), status=status, kkt_residual=0.0, iterations=iters,
    )
    object.__setattr__(sol, "kkt_residual", kkt_residual(p, sol))
    return sol


def _assemble(p: QpProblem, z, dual_eq, dual_ineq, dual_box, status, iters) -> QpSolution:
    sol = QpSolution(
        z=_ro(z), dual_eq=_ro(dual_eq), dual_ineq=_ro(dual_ineq),
        dual_box=_ro(dual_box), status=status, kkt_residual=0.0, iterations=iters,
    )
    object.__setattr__(sol, "kkt_residual", kkt_residual(p, sol))
    return sol


def _solve_with_pinned(p: QpProblem, fixed: np.ndarray, tol: float, max_iters: int) -> QpSolution:
    """Zero-width boxes (lb == ub) leave the barrier no interior, so pinned
    coordinates are substituted out before the solve.  Constraint rows that
    lose all their coefficients (e.g. dynamics of a zero-capacity battery)
    are dropped rather than left as redundant 0 = 0 rows that would make the
    KKT system singular."""
    idx = np.nonzero(fixed)[0]
    keep = np.nonzero(~fixed)[0]
    c = p.lb[idx]
    n = p.n
    atol = 1e-9 * (1.0 + float(np.max(np.abs(c), initial=0.0)))

    def failed(status: str) -> QpSolution:
        z = np.where(fixed, p.lb, 0.0)
        return _assemble(p, z, np.zeros(p.beq.size), np.zeros(p.hineq.size),
                         np.zeros(n), status, 0)

    b_red = p.beq - p.Aeq[:, idx] @ c if p.beq.size else p.beq
    h_red = p.hineq - p.Gineq[:, idx] @ c if p.hineq.size else p.hineq

    if keep.size == 0:
        # everything is pinned; the candidate point is z = c
        ok = True
        if b_red.size and float(np.max(np.abs(b_red))) > atol:
            ok = False
        if h_red.size and float(np.min(h_red)) < -atol:
            ok = False
        z = np.zeros(n)
        z[idx] = c
        dual_box = -(p.P @ z + p.q)
        return _assemble(p, z, np.zeros(p.beq.size), np.zeros(p.hineq.size),
                         dual_box, "optimal" if ok else "infeasible", 0)

    a_kept = np.ones(p.beq.size, dtype=bool)
    if p.beq.size:
        nonzero = np.max(np.abs(p.Aeq[:, keep]), axis=1) > 0.0
        dead = ~nonzero
        if np.any(dead) and float(np.max(np.abs(b_red[dead]), initial=0.0)) > atol:
            return failed("infeasible")
        a_kept = nonzero
    g_kept = np.ones(p.hineq.size, dtype=bool)
    if p.hineq.size:
        nonzero = np.max(np.abs(p.Gineq[:, keep]), axis=1) > 0.0
        dead = ~nonzero
        if np.any(dead) and float(np.min(h_red[dead], initial=0.0)) < -atol:
            return failed("infeasible")
        g_kept = nonzero

    inner = QpProblem(
        P=p.P[np.ix_(keep, keep)],
        q=p.q[keep] + p.P[np.ix_(keep, idx)] @ c,
        Aeq=p.Aeq[np.ix_(a_kept, keep)] if p.beq.size else None,
        beq=b_red[a_kept] if p.beq.size else None,
        Gineq=p.Gineq[np.ix_(g_kept, keep)] if p.hineq.size else None,
        hineq=h_red[g_kept] if p.hineq.size else None,
        lb=p.lb[keep],
        ub=p.ub[keep],
    )
    sol = solve_qp(inner, tol=tol, max_iters=max_iters)

    z = np.zeros(n)
    z[keep] = sol.z
    z[idx] = c
    dual_eq = np.zeros(p.beq.size)
    dual_eq[a_kept] = sol.dual_eq
    dual_ineq = np.zeros(p.hineq.size)
    dual_ineq[g_kept] = sol.dual_ineq
    dual_box = np.zeros(n)
    dual_box[keep] = sol.dual_box
    grad = p.P @ z + p.q
    if p.beq.size:
        grad = grad + p.Aeq.T @ dual_eq
    if p.hineq.size:
        grad = grad + p.Gineq.T @ dual_ineq
    dual_box[idx] = -grad[idx]       # pinned multipliers close stationarity
    out = _assemble(p, z, dual_eq, dual_ineq, dual_box, sol.status, sol.iterations)
    if out.status == "optimal" and out.kkt_residual > tol:
        object.__setattr__(out, "status", "max_iters")
    return out


def solve_qp(problem: QpProblem, tol: float = 1e-8, max_iters: int = 100) -> QpSolution:
    """Solve the QP.  status is "optimal" once the full KKT residual (as
    measured by kkt_residual) is at or below tol; "infeasible" when the
    primal residual stagnates well above tol while the barrier collapses;
    "max_iters" otherwise, returning the best iterate seen."""
    p = problem
    n = p.n
    pinned = np.isfinite(p.lb) & (p.lb == p.ub)
    if np.any(pinned):
        return _solve_with_pinned(p, pinned, tol, max_iters)
    P, q, A, b, G, h = p.P, p.q, p.Aeq, p.beq, p.Gineq, p.hineq
    me, mg = A.shape[0], G.shape[0]
    il = np.nonzero(np.isfinite(p.lb))[0]
    iu = np.nonzero(np.isfinite(p.ub))[0]
    nl, nu = il.size, iu.size
    m_total = mg + nl + nu

    if np.any(p.lb > p.ub + 1e-12):
        z0 = np.clip(np.zeros(n), p.lb, np.where(np.isfinite(p.ub), p.ub, 0.0))
        return _pack(p, z0, np.zeros(me), np.zeros(mg), il, np.zeros(nl), iu,
                     np.zeros(nu), "infeasible", 0)

    if me:
        z_ls, *_ = np.linalg.lstsq(A, b, rcond=None)
        if float(np.max(np.abs(A @ z_ls - b))) > 1e-6 * (1.0 + float(np.max(np.abs(b), initial=0.0))):
            # equalities are inconsistent on their own
            return _pack(p, z_ls, np.zeros(me), np.zeros(mg), il, np.zeros(nl), iu,
                         np.zeros(nu), "infeasible", 0)

    delta_p = 1e-12 * (1.0 + (float(np.max(np.abs(P))) if P.size else 0.0))
    delta_d = 1e-12 * (1.0 + (float(np.max(np.abs(A))) if A.size else 0.0))

    def kkt_solve_factor(H):
        top = np.hstack([H, A.T])
        bot = np.hstack([A, -delta_d * np.eye(me)])
        K = np.vstack([top, bot])
        return K, scipy.linalg.lu_factor(K, check_finite=False)

    def kkt_solve(K_lu, rhs):
        # one round of iterative refinement: the diagonal of the system
        # spans many orders of magnitude near convergence and plain LU
        # loses the last digits exactly where the residual test needs them
        K, lu = K_lu
        sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        resid = rhs - K @ sol
        return sol + scipy.linalg.lu_solve(lu, resid, check_finite=False)

    # starting point: equality-regularized unconstrained minimizer
    H0 = P + np.eye(n) * (1.0 + delta_p)
    lu0 = kkt_solve_factor(H0)
    sol0 = kkt_solve(lu0, np.concatenate([-q, b]))
    z = sol0[:n]
    y = sol0[n:]

    if m_total == 0:
        lu = kkt_solve_factor(P + delta_p * np.eye(n))
        sol = kkt_solve(lu, np.concatenate([-q, b]))
        z, y = sol[:n], sol[n:]
        out = _pack(p, z, y, np.zeros(0), il, np.zeros(0), iu, np.zeros(0), "optimal", 1)
        if out.kkt_residual > tol:
            object.__setattr__(out, "status", "max_iters")
        return out

    s_g = np.maximum(h - G @ z, 1.0) if mg else np.zeros(0)
    w_g = np.ones(mg)
    s_l = np.maximum(z[il] - p.lb[il], 1.0)
    w_l = np.ones(nl)
    s_u = np.maximum(p.ub[iu] - z[iu], 1.0)
    w_u = np.ones(nu)

    best: QpSolution | None = None
    primal_hist: list[float] = []
    stale = 0
    a_p = a_d = 1.0

    # duals diverging while the primal residual stays put is the classic
    # infeasibility signature; expect (and ignore) overflow on the way out
    w_scale = 1.0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for it in range(1, max_iters + 1):
            r_d = P @ z + q + A.T @ y + G.T @ w_g
            np.subtract.at(r_d, il, w_l)
            np.add.at(r_d, iu, w_u)
            r_A = A @ z - b
            r_G = G @ z + s_g - h if mg else np.zeros(0)
            r_L = (z[il] - p.lb[il]) - s_l
            r_U = (p.ub[iu] - z[iu]) - s_u
            mu = (s_g @ w_g + s_l @ w_l + s_u @ w_u) / m_total
            w_scale = max(
                float(np.max(w_g, initial=0.0)),
                float(np.max(w_l, initial=0.0)),
                float(np.max(w_u, initial=0.0)),
            )

            cand = _pack(p, z, y, w_g, il, w_l, iu, w_u, "optimal", it)
            if best is None or cand.kkt_residual < best.kkt_residual:
                best = cand
                stale = 0
            else:
                stale += 1
                if stale >= 15:
                    # cycling on a degenerate optimal face; best iterate is all
                    # this path will give
                    break
            if cand.kkt_residual <= tol:
                return cand

            primal = 0.0
            if me:
                primal = max(primal, float(np.max(np.abs(r_A))))
            if mg:
                primal = max(primal, float(np.max(np.maximum(G @ z - h, 0.0))))
            primal = max(primal, float(np.max(np.maximum(p.lb - z, 0.0), initial=0.0)))
            primal = max(primal, float(np.max(np.maximum(z - p.ub, 0.0), initial=0.0)))
            primal_hist.append(primal)
            if (
                mu < 1e3 * tol
                and len(primal_hist) >= 6
                and primal > max(1e-6, 1e3 * tol)
                and primal > 0.99 * primal_hist[-6]
            ):
                object.__setattr__(best, "status", "infeasible")
                return best

            d_g = w_g / s_g if mg else np.zeros(0)
            H = P + delta_p * np.eye(n)
            if mg:
                H = H + (G.T * d_g) @ G
            if nl:
                H[il, il] += w_l / s_l
            if nu:
                H[iu, iu] += w_u / s_u
            try:
                lu = kkt_solve_factor(H)
            except (np.linalg.LinAlgError, ValueError):
                break

            def direction(rc_g, rc_l, rc_u):
                rhs_z = -r_d.copy()
                if mg:
                    rhs_z -= G.T @ ((rc_g + w_g * r_G) / s_g)
                if nl:
                    np.add.at(rhs_z, il, (rc_l - w_l * r_L) / s_l)
                if nu:
                    np.subtract.at(rhs_z, iu, (rc_u - w_u * r_U) / s_u)
                sol = kkt_solve(lu, np.concatenate([rhs_z, -r_A]))
                dz, dy = sol[:n], sol[n:]
                ds_g = -r_G - G @ dz if mg else np.zeros(0)
                dw_g = (rc_g - w_g * ds_g) / s_g if mg else np.zeros(0)
                ds_l = dz[il] + r_L
                dw_l = (rc_l - w_l * ds_l) / s_l if nl else np.zeros(0)
                ds_u = r_U - dz[iu]
                dw_u = (rc_u - w_u * ds_u) / s_u if nu else np.zeros(0)
                return dz, dy, ds_g, dw_g, ds_l, dw_l, ds_u, dw_u

            def max_step(v, dv):
                neg = dv < 0
                if not np.any(neg):
                    return np.inf
                return float(np.min(-v[neg] / dv[neg]))

            # predictor
            aff = direction(-s_g * w_g, -s_l * w_l, -s_u * w_u)
            dz_a, dy_a, ds_g_a, dw_g_a, ds_l_a, dw_l_a, ds_u_a, dw_u_a = aff
            a_p = min(1.0, max_step(s_g, ds_g_a), max_step(s_l, ds_l_a), max_step(s_u, ds_u_a))
            a_d = min(1.0, max_step(w_g, dw_g_a), max_step(w_l, dw_l_a), max_step(w_u, dw_u_a))
            mu_aff = (
                (s_g + a_p * ds_g_a) @ (w_g + a_d * dw_g_a)
                + (s_l + a_p * ds_l_a) @ (w_l + a_d * dw_l_a)
                + (s_u + a_p * ds_u_a) @ (w_u + a_d * dw_u_a)
            ) / m_total
            sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3
            if min(a_p, a_d) < 0.05:
                # affine direction is blocked at once: recenter hard instead of
                # grinding along the boundary of a degenerate face
                sigma = max(sigma, 0.8)

            # corrector
            cor = direction(
                -s_g * w_g + sigma * mu - ds_g_a * dw_g_a,
                -s_l * w_l + sigma * mu - ds_l_a * dw_l_a,
                -s_u * w_u + sigma * mu - ds_u_a * dw_u_a,
            )
            dz, dy, ds_g, dw_g, ds_l, dw_l, ds_u, dw_u = cor
            tau = min(0.995, max(0.99, 1.0 - 100.0 * mu))
            a_p = min(1.0, tau * max_step(s_g, ds_g), tau * max_step(s_l, ds_l), tau * max_step(s_u, ds_u))
            a_d = min(1.0, tau * max_step(w_g, dw_g), tau * max_step(w_l, dw_l), tau * max_step(w_u, dw_u))

            z = z + a_p * dz
            s_g = s_g + a_p * ds_g
            s_l = s_l + a_p * ds_l
            s_u = s_u + a_p * ds_u
            y = y + a_d * dy
            w_g = w_g + a_d * dw_g
            w_l = w_l + a_d * dw_l
            w_u = w_u + a_d * dw_u
            if not (np.all(np.isfinite(z)) and np.all(np.isfinite(w_g))
                    and np.all(np.isfinite(w_l)) and np.all(np.isfinite(w_u))):
                break

    assert best is not None
    if best.status == "optimal" and best.kkt_residual > tol:
        status = "max_iters"
        if (primal_hist and primal_hist[-1] > max(1e-6, 1e3 * tol)
                and np.isfinite(w_scale) and w_scale > 1e7):
            status = "infeasible"
        object.__setattr__(best, "status", status)
    return best
