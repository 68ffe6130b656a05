"""Message contract between the virtual clearing house and the microgrids.

Every exchange in either negotiation phase is one of the frozen records
below.  Payloads carry only trade quantities, payments and dual prices;
local schedules never leave a microgrid.  An in-process list plays the role
of the transport; anything with an append method can be substituted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

_HEADER_BYTES = 16  # nominal per-message framing overhead in the byte estimate


def _frozen_copy(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class BroadcastEnergy:
    """Clearing house to all microgrids: cleared trades and duals, phase 1."""

    e_hat: np.ndarray           # (M, M, T) cleared trades
    duals: np.ndarray           # (M, M, T) trade prices
    rho: float
    iteration: int
    kind = "broadcast_energy"
    phase = "p1"

    def __post_init__(self) -> None:
        object.__setattr__(self, "e_hat", _frozen_copy(self.e_hat))
        object.__setattr__(self, "duals", _frozen_copy(self.duals))

    def payload_bytes(self) -> int:
        return self.e_hat.nbytes + self.duals.nbytes + _HEADER_BYTES


@dataclass(frozen=True)
class ProposeEnergy:
    """One microgrid to the clearing house: its proposed trades, phase 1."""

    sender: str
    trades: np.ndarray          # (M, T), the sender's own row
    iteration: int
    kind = "propose_energy"
    phase = "p1"

    def __post_init__(self) -> None:
        object.__setattr__(self, "trades", _frozen_copy(self.trades))

    def payload_bytes(self) -> int:
        return self.trades.nbytes + _HEADER_BYTES


@dataclass(frozen=True)
class BroadcastPayment:
    """Clearing house to trading microgrids: cleared payments and duals."""

    pi_hat: np.ndarray          # (M', M') cleared payments
    duals: np.ndarray           # (M', M') payment duals
    rho: float
    iteration: int
    kind = "broadcast_payment"
    phase = "p2"

    def __post_init__(self) -> None:
        object.__setattr__(self, "pi_hat", _frozen_copy(self.pi_hat))
        object.__setattr__(self, "duals", _frozen_copy(self.duals))

    def payload_bytes(self) -> int:
        return self.pi_hat.nbytes + self.duals.nbytes + _HEADER_BYTES


@dataclass(frozen=True)
class ProposePayment:
    """One trading microgrid to the clearing house: its payment row."""

    sender: str
    payments: np.ndarray        # (M',)
    iteration: int
    kind = "propose_payment"
    phase = "p2"

    def __post_init__(self) -> None:
        object.__setattr__(self, "payments", _frozen_copy(self.payments))

    def payload_bytes(self) -> int:
        return self.payments.nbytes + _HEADER_BYTES


@dataclass(frozen=True)
class Terminate:
    """End-of-phase marker with the stop reason."""

    phase: str                  # "p1" | "p2"
    reason: str                 # "converged" | "max_iters"
    iteration: int
    kind = "terminate"

    def payload_bytes(self) -> int:
        return _HEADER_BYTES


Message = Union[BroadcastEnergy, ProposeEnergy, BroadcastPayment, ProposePayment, Terminate]


@dataclass(frozen=True)
class TraceRecord:
    """Per-iteration communication summary: counts and bytes, no payloads."""

    phase: str
    iteration: int
    broadcasts: int
    proposals: int
    bytes: int


def summarize(messages) -> list[TraceRecord]:
    """Aggregate a message list into per-(phase, iteration) records, in
    first-seen order.  Terminate markers count bytes but no messages."""
    order: list[tuple[str, int]] = []
    acc: dict[tuple[str, int], list[int]] = {}
    for msg in messages:
        key = (msg.phase, msg.iteration)
        if key not in acc:
            acc[key] = [0, 0, 0]
            order.append(key)
        rec = acc[key]
        if msg.kind.startswith("broadcast"):
            rec[0] += 1
        elif msg.kind.startswith("propose"):
            rec[1] += 1
        rec[2] += msg.payload_bytes()
    return [TraceRecord(ph, it, *acc[(ph, it)]) for ph, it in order]
