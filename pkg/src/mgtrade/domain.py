"""Core data model for multi-microgrid scheduling and energy trading.

Conventions used throughout the package:

* every per-slot sequence has one entry per time slot,
* quantities are energy per slot (kWh); with ``slot_hours=1`` a kW rating
  and the kWh it can deliver in one slot coincide numerically,
* prices are currency per kWh,
* all public types are immutable after construction (frozen dataclasses
  holding read-only float64 arrays), so they can be shared freely between
  concurrent per-microgrid solves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class DimensionError(ValueError):
    """A sequence has the wrong length or an array the wrong shape."""


class ScenarioError(ValueError):
    """A scenario violates a structural or feasibility requirement."""


def _vec(values: Iterable[float] | np.ndarray, name: str, length: int | None = None) -> np.ndarray:
    """Normalize to a read-only float64 1-D array, checking length if given."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name}: expected a 1-D sequence, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name}: expected length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: entries must be finite")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


def _mat(values, name: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: entries must be finite")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Scheduling horizon.  Default is one day in hourly slots."""

    slots: int = 24
    slot_hours: float = 1.0

    def __post_init__(self) -> None:
        if self.slots < 1:
            raise ValueError("TimeGrid.slots must be >= 1")
        if not (self.slot_hours > 0):
            raise ValueError("TimeGrid.slot_hours must be > 0")


@dataclass(frozen=True)
class GridPrices:
    """Per-slot main-grid tariff.  buy is what a microgrid pays per kWh
    purchased, sell is the feed-in rate received per kWh exported."""

    buy: np.ndarray
    sell: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "buy", _vec(self.buy, "prices.buy"))
        object.__setattr__(self, "sell", _vec(self.sell, "prices.sell", len(self.buy)))
        if np.any(self.buy < 0) or np.any(self.sell < 0):
            raise ValueError("prices must be nonnegative")

    @property
    def slots(self) -> int:
        return int(self.buy.shape[0])


@dataclass(frozen=True)
class StorageParams:
    """Battery parameters.  Charge/discharge quantities are the energy
    moved through the storage port per slot; losses are applied inside."""

    capacity_kwh: float
    dod: float                      # usable depth of discharge, level stays in [(1-dod)*cap, cap]
    max_charge_kw: float
    max_discharge_kw: float
    charge_eff: float
    discharge_eff: float
    cost_per_kwh: float             # wear price on every kWh charged or discharged
    initial_kwh: float

    def __post_init__(self) -> None:
        if self.capacity_kwh < 0:
            raise ValueError("storage.capacity_kwh must be >= 0")
        if not (0 < self.dod <= 1):
            raise ValueError("storage.dod must be in (0, 1]")
        if self.max_charge_kw < 0 or self.max_discharge_kw < 0:
            raise ValueError("storage rate limits must be >= 0")
        if not (0 < self.charge_eff <= 1) or not (0 < self.discharge_eff <= 1):
            raise ValueError("storage efficiencies must be in (0, 1]")
        if self.cost_per_kwh < 0:
            raise ValueError("storage.cost_per_kwh must be >= 0")
        lo = (1.0 - self.dod) * self.capacity_kwh
        if not (lo - 1e-9 <= self.initial_kwh <= self.capacity_kwh + 1e-9):
            raise ValueError(
                f"storage.initial_kwh={self.initial_kwh} outside the usable band "
                f"[{lo}, {self.capacity_kwh}]"
            )

    @property
    def min_level_kwh(self) -> float:
        return (1.0 - self.dod) * self.capacity_kwh


@dataclass(frozen=True)
class UserParams:
    """One elastic load.  The user must receive total_kwh over the horizon,
    within per-slot bounds, and is unhappy proportionally to beta times the
    squared deviation from its preferred profile."""

    total_kwh: float
    min_kw: np.ndarray
    max_kw: np.ndarray
    preferred_kw: np.ndarray
    beta: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "min_kw", _vec(self.min_kw, "user.min_kw"))
        n = len(self.min_kw)
        object.__setattr__(self, "max_kw", _vec(self.max_kw, "user.max_kw", n))
        object.__setattr__(self, "preferred_kw", _vec(self.preferred_kw, "user.preferred_kw", n))
        if self.beta < 0:
            raise ValueError("user.beta must be >= 0")
        if np.any(self.min_kw < 0):
            raise ValueError("user.min_kw must be >= 0")
        if np.any(self.min_kw > self.max_kw + 1e-12):
            raise ValueError("user.min_kw must not exceed user.max_kw")
        lo, hi = float(self.min_kw.sum()), float(self.max_kw.sum())
        if not (lo - 1e-9 <= self.total_kwh <= hi + 1e-9):
            raise ValueError(
                f"user.total_kwh={self.total_kwh} outside the achievable range [{lo}, {hi}]"
            )


@dataclass(frozen=True)
class MicrogridParams:
    """Static description of one microgrid."""

    id: str
    wind_capacity_kw: float
    wind_fraction: np.ndarray       # per-slot available fraction of capacity, in [0, 1]
    max_buy_kw: float
    max_sell_kw: float
    inelastic_kw: np.ndarray        # per-slot must-serve load
    users: tuple[UserParams, ...]
    storage: StorageParams

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("microgrid.id must be nonempty")
        object.__setattr__(self, "wind_fraction", _vec(self.wind_fraction, f"microgrid[{self.id}].wind_fraction"))
        t = len(self.wind_fraction)
        object.__setattr__(self, "inelastic_kw", _vec(self.inelastic_kw, f"microgrid[{self.id}].inelastic_kw", t))
        object.__setattr__(self, "users", tuple(self.users))
        if self.wind_capacity_kw < 0 or self.max_buy_kw < 0 or self.max_sell_kw < 0:
            raise ValueError(f"microgrid[{self.id}]: capacities must be >= 0")
        if np.any(self.wind_fraction < 0) or np.any(self.wind_fraction > 1 + 1e-12):
            raise ValueError(f"microgrid[{self.id}].wind_fraction must lie in [0, 1]")
        if np.any(self.inelastic_kw < 0):
            raise ValueError(f"microgrid[{self.id}].inelastic_kw must be >= 0")
        for k, u in enumerate(self.users):
            if len(u.min_kw) != t:
                raise DimensionError(
                    f"microgrid[{self.id}].users[{k}]: per-slot sequences must have length {t}"
                )

    @property
    def slots(self) -> int:
        return int(len(self.wind_fraction))


@dataclass(frozen=True)
class Scenario:
    """A complete problem instance: horizon, tariff and the microgrids."""

    time: TimeGrid
    prices: GridPrices
    microgrids: tuple[MicrogridParams, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "microgrids", tuple(self.microgrids))
        if len(self.microgrids) < 1:
            raise ScenarioError("scenario needs at least one microgrid")
        if self.prices.slots != self.time.slots:
            raise DimensionError(
                f"prices: expected {self.time.slots} slots, got {self.prices.slots}"
            )
        ids = [m.id for m in self.microgrids]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"duplicate microgrid ids: {ids}")
        for m in self.microgrids:
            if m.slots != self.time.slots:
                raise DimensionError(
                    f"microgrid[{m.id}]: sequences have {m.slots} slots, scenario has {self.time.slots}"
                )

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(m.id for m in self.microgrids)

    def by_id(self, mg_id: str) -> MicrogridParams:
        for m in self.microgrids:
            if m.id == mg_id:
                return m
        raise KeyError(mg_id)


@dataclass(frozen=True)
class Schedule:
    """One microgrid's dispatch over the horizon.  elastic_kw has one row
    per user.  storage_level_kwh is the end-of-slot level implied by the
    charge/discharge decisions (see storage_trajectory)."""

    wind_kw: np.ndarray
    grid_buy_kw: np.ndarray
    grid_sell_kw: np.ndarray
    elastic_kw: np.ndarray
    charge_kw: np.ndarray
    discharge_kw: np.ndarray
    storage_level_kwh: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "wind_kw", _vec(self.wind_kw, "schedule.wind_kw"))
        t = len(self.wind_kw)
        for name in ("grid_buy_kw", "grid_sell_kw", "charge_kw", "discharge_kw", "storage_level_kwh"):
            object.__setattr__(self, name, _vec(getattr(self, name), f"schedule.{name}", t))
        el = np.asarray(self.elastic_kw, dtype=np.float64)
        if el.ndim == 1:
            el = el.reshape(1, -1)
        if el.ndim != 2 or el.shape[1] != t:
            raise DimensionError(f"schedule.elastic_kw: expected shape (users, {t})")
        el = el.copy()
        el.flags.writeable = False
        object.__setattr__(self, "elastic_kw", el)

    @classmethod
    def from_decisions(
        cls,
        wind_kw,
        grid_buy_kw,
        grid_sell_kw,
        elastic_kw,
        charge_kw,
        discharge_kw,
        storage: StorageParams,
    ) -> "Schedule":
        """Build a schedule, deriving the storage trajectory from the
        charge/discharge decisions so the dynamics hold by construction."""
        level = storage_trajectory(charge_kw, discharge_kw, storage)
        return cls(wind_kw, grid_buy_kw, grid_sell_kw, elastic_kw,
                   charge_kw, discharge_kw, level)

    @property
    def slots(self) -> int:
        return int(len(self.wind_kw))

    @property
    def total_elastic_kw(self) -> np.ndarray:
        return self.elastic_kw.sum(axis=0)


# ---------------------------------------------------------------------------
# trade and payment containers


def _index_of(ids: tuple[str, ...], mg_id: str) -> int:
    try:
        return ids.index(mg_id)
    except ValueError:
        raise KeyError(f"unknown microgrid id {mg_id!r}") from None


@dataclass(frozen=True)
class TradeMatrix:
    """Pairwise energy trades.  values[i, j, t] is the energy microgrid
    ids[i] receives from ids[j] in slot t (negative means it delivers).
    A cleared matrix satisfies values[i, j, t] == -values[j, i, t]."""

    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        m = len(self.ids)
        if m != len(set(self.ids)):
            raise ValueError("TradeMatrix ids must be unique")
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != m or arr.shape[1] != m:
            raise DimensionError(f"TradeMatrix.values: expected shape ({m}, {m}, T)")
        if np.any(np.abs(np.einsum("iit->it", arr)) > 0):
            raise ValueError("TradeMatrix diagonal (self-trades) must be zero")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, ids: Sequence[str], slots: int) -> "TradeMatrix":
        return cls(tuple(ids), np.zeros((len(ids), len(ids), slots)))

    @property
    def slots(self) -> int:
        return int(self.values.shape[2])

    def get(self, i: str, j: str) -> np.ndarray:
        return self.values[_index_of(self.ids, i), _index_of(self.ids, j)]

    def incoming(self, i: str) -> np.ndarray:
        """All trades seen from microgrid i: one row per counterpart, in id order."""
        k = _index_of(self.ids, i)
        others = [r for r in range(len(self.ids)) if r != k]
        return self.values[k, others, :]

    def net(self, i: str) -> np.ndarray:
        """Per-slot net energy received by i from all partners."""
        return self.values[_index_of(self.ids, i)].sum(axis=0)

    def antisymmetry_residual(self) -> float:
        return float(np.max(np.abs(self.values + np.swapaxes(self.values, 0, 1))))

    def max_abs_trade(self, i: str) -> float:
        return float(np.max(np.abs(self.values[_index_of(self.ids, i)])))


@dataclass(frozen=True)
class PaymentMatrix:
    """Pairwise payments.  values[i, j] is what ids[i] pays ids[j] over the
    whole horizon (negative means i is paid by j)."""

    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        m = len(self.ids)
        if m != len(set(self.ids)):
            raise ValueError("PaymentMatrix ids must be unique")
        arr = _mat(self.values, "PaymentMatrix.values", (m, m))
        if np.any(np.abs(np.diag(arr)) > 0):
            raise ValueError("PaymentMatrix diagonal must be zero")
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, ids: Sequence[str]) -> "PaymentMatrix":
        return cls(tuple(ids), np.zeros((len(ids), len(ids))))

    def get(self, i: str, j: str) -> float:
        return float(self.values[_index_of(self.ids, i), _index_of(self.ids, j)])

    def net(self, i: str) -> float:
        """Total paid out by i (negative: i receives money on balance)."""
        return float(self.values[_index_of(self.ids, i)].sum())

    def nets(self) -> dict[str, float]:
        return {i: self.net(i) for i in self.ids}

    def antisymmetry_residual(self) -> float:
        return float(np.max(np.abs(self.values + self.values.T)))


# ---------------------------------------------------------------------------
# cost functions


def energy_cost(grid_buy_kw, grid_sell_kw, prices: GridPrices) -> float:
    """Net cost of main-grid exchange: purchases minus feed-in revenue."""
    buy = np.asarray(grid_buy_kw, dtype=np.float64)
    sell = np.asarray(grid_sell_kw, dtype=np.float64)
    if buy.shape != sell.shape or buy.shape != prices.buy.shape:
        raise DimensionError("energy_cost: sequences and prices must share one length")
    return float(prices.buy @ buy - prices.sell @ sell)


def discomfort_cost(elastic_kw, users: Sequence[UserParams]) -> float:
    """Sum over users of beta * squared deviation from the preferred profile."""
    el = np.asarray(elastic_kw, dtype=np.float64)
    if el.ndim == 1:
        el = el.reshape(1, -1)
    if el.shape[0] != len(users):
        raise DimensionError(f"discomfort_cost: {el.shape[0]} rows for {len(users)} users")
    total = 0.0
    for row, u in zip(el, users):
        d = row - u.preferred_kw
        total += u.beta * float(d @ d)
    return total


def storage_cost(charge_kw, discharge_kw, storage: StorageParams) -> float:
    """Wear cost proportional to total energy moved through the battery."""
    rc = np.asarray(charge_kw, dtype=np.float64)
    rd = np.asarray(discharge_kw, dtype=np.float64)
    return storage.cost_per_kwh * float(rc.sum() + rd.sum())


def storage_trajectory(charge_kw, discharge_kw, storage: StorageParams) -> np.ndarray:
    """End-of-slot storage levels from the recurrence
    level[t] = level[t-1] + charge_eff * charge[t] - discharge[t] / discharge_eff.

    Pure bookkeeping: band and rate feasibility are checked by validate().
    """
    rc = np.asarray(charge_kw, dtype=np.float64)
    rd = np.asarray(discharge_kw, dtype=np.float64)
    if rc.shape != rd.shape or rc.ndim != 1:
        raise DimensionError("storage_trajectory: charge and discharge must be 1-D and equal length")
    deltas = storage.charge_eff * rc - rd / storage.discharge_eff
    return storage.initial_kwh + np.cumsum(deltas)


def operating_cost(schedule: Schedule, mg: MicrogridParams, prices: GridPrices) -> float:
    """Total operating cost of one microgrid: grid exchange plus user
    discomfort plus storage wear.  Trades carry no operating cost; they are
    settled separately through payments."""
    return (
        energy_cost(schedule.grid_buy_kw, schedule.grid_sell_kw, prices)
        + discomfort_cost(schedule.elastic_kw, mg.users)
        + storage_cost(schedule.charge_kw, schedule.discharge_kw, mg.storage)
    )


def operating_cost_gradient(
    schedule: Schedule, mg: MicrogridParams, prices: GridPrices
) -> dict[str, np.ndarray]:
    """Analytic gradient of operating_cost with respect to each decision
    sequence, keyed like the Schedule fields."""
    t = schedule.slots
    grads = {
        "wind_kw": np.zeros(t),
        "grid_buy_kw": prices.buy.copy(),
        "grid_sell_kw": -prices.sell.copy(),
        "charge_kw": np.full(t, mg.storage.cost_per_kwh),
        "discharge_kw": np.full(t, mg.storage.cost_per_kwh),
        "elastic_kw": np.vstack(
            [2.0 * u.beta * (row - u.preferred_kw)
             for row, u in zip(schedule.elastic_kw, mg.users)]
        ),
    }
    return grads


# ---------------------------------------------------------------------------
# feasibility checking


@dataclass(frozen=True)
class Violation:
    """One violated constraint, with slot/user context where meaningful."""

    constraint: str
    residual: float
    slot: int | None = None
    user: int | None = None

    def __str__(self) -> str:
        where = ""
        if self.slot is not None:
            where += f" slot={self.slot}"
        if self.user is not None:
            where += f" user={self.user}"
        return f"{self.constraint}{where}: residual={self.residual:.3e}"


def validate(
    schedule: Schedule,
    trades_for_i: np.ndarray | None,
    mg: MicrogridParams,
    prices: GridPrices | None = None,
    tol: float = 1e-6,
    time: TimeGrid | None = None,
) -> list[Violation]:
    """Check every operating constraint of one microgrid and report the
    violations beyond tol (empty list means feasible).

    trades_for_i: per-counterpart rows of energy received by this microgrid,
    shape (partners, T), or None when it does not trade.  prices are accepted
    for signature symmetry with the cost functions but are not needed for
    feasibility.
    """
    del prices
    t = mg.slots
    sh = (time or TimeGrid(slots=t)).slot_hours
    if schedule.slots != t:
        raise DimensionError(f"validate: schedule has {schedule.slots} slots, microgrid has {t}")
    if schedule.elastic_kw.shape[0] != len(mg.users):
        raise DimensionError(
            f"validate: schedule has {schedule.elastic_kw.shape[0]} elastic rows "
            f"for {len(mg.users)} users"
        )
    if trades_for_i is None:
        net_trade = np.zeros(t)
    else:
        tr = np.asarray(trades_for_i, dtype=np.float64)
        if tr.ndim == 1:
            tr = tr.reshape(1, -1)
        if tr.shape[1] != t:
            raise DimensionError(f"validate: trades_for_i must have {t} columns")
        net_trade = tr.sum(axis=0)

    out: list[Violation] = []

    def check_box(name: str, val: np.ndarray, lo: np.ndarray | float, hi: np.ndarray | float,
                  user: int | None = None) -> None:
        below = np.maximum(lo - val, 0.0)
        above = np.maximum(val - hi, 0.0)
        worst = np.maximum(below, above)
        for slot in np.nonzero(worst > tol)[0]:
            out.append(Violation(name, float(worst[slot]), slot=int(slot), user=user))

    avail = mg.wind_fraction * mg.wind_capacity_kw * sh
    check_box("wind_bound", schedule.wind_kw, 0.0, avail)
    check_box("buy_bound", schedule.grid_buy_kw, 0.0, mg.max_buy_kw * sh)
    check_box("sell_bound", schedule.grid_sell_kw, 0.0, mg.max_sell_kw * sh)
    check_box("charge_rate", schedule.charge_kw, 0.0, mg.storage.max_charge_kw * sh)
    check_box("discharge_rate", schedule.discharge_kw, 0.0, mg.storage.max_discharge_kw * sh)

    for n, u in enumerate(mg.users):
        row = schedule.elastic_kw[n]
        check_box("load_bounds", row, u.min_kw * sh, u.max_kw * sh, user=n)
        gap = abs(float(row.sum()) - u.total_kwh)
        if gap > tol:
            out.append(Violation("load_total", gap, user=n))

    level = storage_trajectory(schedule.charge_kw, schedule.discharge_kw, mg.storage)
    drift = np.abs(schedule.storage_level_kwh - level)
    for slot in np.nonzero(drift > tol)[0]:
        out.append(Violation("storage_dynamics", float(drift[slot]), slot=int(slot)))
    check_box("dod_band", schedule.storage_level_kwh,
              mg.storage.min_level_kwh, mg.storage.capacity_kwh)
    terminal = abs(float(schedule.storage_level_kwh[-1]) - mg.storage.initial_kwh)
    if terminal > tol:
        out.append(Violation("terminal_level", terminal, slot=t - 1))

    # a microgrid can only sell surplus: grid_sell <= available wind - wind used + level
    sell_cap = avail - schedule.wind_kw + schedule.storage_level_kwh
    over = schedule.grid_sell_kw - sell_cap
    for slot in np.nonzero(over > tol)[0]:
        out.append(Violation("selling_availability", float(over[slot]), slot=int(slot)))

    supply = (schedule.wind_kw + schedule.grid_buy_kw + schedule.discharge_kw + net_trade)
    demand = (schedule.grid_sell_kw + schedule.charge_kw + mg.inelastic_kw * sh
              + schedule.total_elastic_kw)
    gap = np.abs(supply - demand)
    for slot in np.nonzero(gap > tol)[0]:
        out.append(Violation("balance", float(gap[slot]), slot=int(slot)))

    return out
