"""Payment bargaining between the trading microgrids.

Given each trader's cost saving (surplus) from the energy stage, the
payments maximize the product of the individual benefits, i.e. the Nash
bargaining objective sum_i -log(delta_i - sum_j pi_ij).  The structure is
the same two-level loop as the energy stage: each trader updates its own
payment row in closed form (the local problem is smooth and strictly convex
in the row's sum, so its KKT condition reduces to one positive root of a
quadratic), then the clearing house projects onto antisymmetric payments
and takes a dual step.

The analytic solution is equal splitting of the total surplus: every
trader's final benefit is sum(delta) / M'.  nbs_payment_oracle computes it
directly and is the reference the iterative route is tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import PaymentMatrix
from .messages import BroadcastPayment, ProposePayment, Terminate


class NoBargainError(RuntimeError):
    """Total surplus is not positive, so no mutually beneficial payment exists."""


@dataclass(frozen=True)
class Surplus:
    """Per-trader cost saving delta_i = standalone cost - trading cost.
    Individual entries may be negative; bargaining requires a positive total."""

    values: dict[str, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", dict(self.values))

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(self.values.keys())

    @property
    def total(self) -> float:
        return float(sum(self.values.values()))

    def get(self, i: str) -> float:
        return float(self.values[i])

    def as_array(self) -> np.ndarray:
        return np.array([self.values[i] for i in self.ids], dtype=np.float64)


def equal_share(surplus: Surplus) -> float:
    """Final benefit every trader receives at the bargaining solution."""
    return surplus.total / len(surplus.values)


def nbs_payment_oracle(surplus: Surplus) -> dict[str, float]:
    """Closed-form net payments: each trader pays its surplus minus the
    equal share, so everyone nets the same benefit.  Floating-point crumbs
    are swept into an entry that can absorb them, so the returned nets sum
    to exactly 0.0."""
    if len(surplus.values) < 2:
        raise ValueError("payment bargaining needs at least two traders")
    share = equal_share(surplus)
    nets = {i: surplus.get(i) - share for i in surplus.ids}
    # sweep ulp-sized crumbs into whichever entry can still represent the
    # correction (the smallest ones can absorb the finest residuals)
    while (resid := math.fsum(nets.values())) != 0.0:
        for i in sorted(surplus.ids, key=lambda j: abs(nets[j])):
            corrected = nets[i] - resid
            if corrected != nets[i]:
                nets[i] = corrected
                break
        else:
            break
    return nets


@dataclass
class AdmmStateP2:
    """Bargaining state after iteration k (matrices indexed like ids)."""

    ids: tuple[str, ...]
    pi: np.ndarray              # (M', M') last local proposals
    pi_hat: np.ndarray          # (M', M') last cleared payments
    gamma: np.ndarray           # (M', M') duals
    rho2: float
    k: int


def initial_state_p2(ids, rho2: float = 1.0) -> AdmmStateP2:
    m = len(ids)
    zeros = lambda: np.zeros((m, m))
    return AdmmStateP2(tuple(ids), zeros(), zeros(), zeros(), rho2, 0)


def local_step_p2(i: str, delta_i: float, state: AdmmStateP2) -> np.ndarray:
    """One trader's best-response payment row, shape (M',) with the self
    entry zero.

    Minimizing -log(delta_i - sum_j pi_j) plus the penalty and dual terms
    around the cleared row gives pi_j = pi_hat_j + (gamma_j - mu) / rho2,
    where mu > 0 solves c mu^2 + a mu - 1 = 0 with c = (M'-1)/rho2 and
    a = delta_i - sum_j pi_hat_j - sum_j gamma_j / rho2.  The resulting
    benefit delta_i - sum_j pi_j equals 1/mu, always positive.
    """
    idx = state.ids.index(i)
    m = len(state.ids) - 1
    if m == 0:
        raise ValueError("payment bargaining needs at least two traders")
    rho = state.rho2
    c = m / rho
    a = delta_i - float(state.pi_hat[idx].sum()) - float(state.gamma[idx].sum()) / rho
    mu = (-a + math.sqrt(a * a + 4.0 * c)) / (2.0 * c)
    row = state.pi_hat[idx] + (state.gamma[idx] - mu) / rho
    row[idx] = 0.0
    return row


def clearing_update_payment(pi: np.ndarray, gamma: np.ndarray, rho2: float) -> np.ndarray:
    """Closed-form projection onto antisymmetric payments; same form as the
    energy clearing, with bit-identical negation across each pair."""
    if rho2 <= 0:
        raise ValueError("rho2 must be > 0")
    iu, ju = np.triu_indices(pi.shape[0], k=1)
    val = (rho2 * (pi[iu, ju] - pi[ju, iu]) - (gamma[iu, ju] - gamma[ju, iu])) / (2.0 * rho2)
    pi_hat = np.zeros_like(pi)
    pi_hat[iu, ju] = val
    pi_hat[ju, iu] = -val
    return pi_hat


def dual_update_payment(gamma: np.ndarray, pi_hat: np.ndarray, pi: np.ndarray, rho2: float) -> np.ndarray:
    return gamma + rho2 * (pi_hat - pi)


@dataclass(frozen=True)
class P2Result:
    payments: PaymentMatrix                     # cleared pairwise payments
    benefits: dict[str, float]                  # delta_i - net_i at the solution
    iterations: int
    converged: bool
    residuals: tuple[tuple[int, float, float], ...]  # (k, primal, nash objective)


def run_p2(
    surplus: Surplus,
    *,
    rho2: float = 1.0,
    eps2: float | None = None,
    max_iters: int = 200_000,
    spread_tol: float | None = None,
    trace=None,
) -> P2Result:
    """Run the payment bargaining.  eps2 defaults to 1e-6 * M'.

    Stops when the summed proposal/cleared distance is at most eps2 and the
    spread of the locally reported benefits is at most spread_tol (default
    5 * eps2).  The spread condition uses only quantities the clearing house
    already sees and guarantees the near-equal-benefit property at
    termination even when the surplus scale makes the raw residual an
    optimistic measure.
    """
    ids = surplus.ids
    mprime = len(ids)
    if mprime < 2:
        raise ValueError("payment bargaining needs at least two traders")
    if surplus.total <= 0:
        raise NoBargainError(
            f"total surplus {surplus.total:.6g} is not positive; no payment "
            f"can benefit every trader"
        )
    if rho2 <= 0:
        raise ValueError("rho2 must be > 0")
    if eps2 is None:
        eps2 = 1e-6 * mprime
    if spread_tol is None:
        spread_tol = 5.0 * eps2

    delta = surplus.as_array()
    m = mprime - 1
    c = m / rho2
    pi_hat = np.zeros((mprime, mprime))
    gamma = np.zeros((mprime, mprime))
    history: list[tuple[int, float, float]] = []
    converged = False
    iterations = 0

    for k in range(1, max_iters + 1):
        iterations = k
        if trace is not None:
            trace.append(BroadcastPayment(pi_hat, gamma, rho2, k))

        # all local rows at once (the per-row math matches local_step_p2)
        a = delta - pi_hat.sum(axis=1) - gamma.sum(axis=1) / rho2
        mu = (-a + np.sqrt(a * a + 4.0 * c)) / (2.0 * c)
        pi = pi_hat + (gamma - mu[:, None]) / rho2
        np.fill_diagonal(pi, 0.0)
        if trace is not None:
            for idx, i in enumerate(ids):
                trace.append(ProposePayment(i, pi[idx], k))

        pi_hat_new = clearing_update_payment(pi, gamma, rho2)
        gamma = dual_update_payment(gamma, pi_hat_new, pi, rho2)

        primal = sum(float(np.linalg.norm(pi_hat_new[idx] - pi[idx])) for idx in range(mprime))
        benefits = 1.0 / mu
        history.append((k, primal, float(np.prod(benefits))))
        pi_hat = pi_hat_new

        if primal <= eps2 and float(benefits.max() - benefits.min()) <= spread_tol:
            converged = True
            break

    if trace is not None:
        trace.append(Terminate("p2", "converged" if converged else "max_iters", iterations))

    payments = PaymentMatrix(ids, pi_hat)
    final_benefits = {i: float(delta[idx] - payments.net(i)) for idx, i in enumerate(ids)}
    return P2Result(
        payments=payments,
        benefits=final_benefits,
        iterations=iterations,
        converged=converged,
        residuals=tuple(history),
    )


def residuals_to_csv(residuals, path) -> None:
    """Write an iteration log: (iteration, primal_residual, nash_objective)."""
    with open(path, "w") as fh:
        fh.write("iteration,primal_residual,nash_objective\n")
        for row in residuals:
            fh.write(",".join(f"{v:.10g}" for v in row) + "\n")
