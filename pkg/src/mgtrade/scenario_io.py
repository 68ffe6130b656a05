"""Scenario files: JSON parsing, emission and deterministic synthesis.

The file layout mirrors the domain types.  Wind may be given directly as
per-slot fractions or as a wind-speed CSV plus a power curve; grid prices
may be given as explicit buy/sell series, a CSV, or buy plus a feed-in
rate (absolute price by default, or a fraction of the buy price).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .domain import (
    GridPrices,
    MicrogridParams,
    Scenario,
    ScenarioError,
    StorageParams,
    TimeGrid,
    UserParams,
)
from .wind import PowerCurve, ingest_speeds, power_fraction


def _need(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise ScenarioError(f"{path}.{key}: missing required field")
    return obj[key]


def _num(obj: dict, key: str, path: str, default=None) -> float:
    if default is not None and key not in obj:
        return float(default)
    val = _need(obj, key, path)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ScenarioError(f"{path}.{key}: expected a number, got {val!r}")
    return float(val)


def _numlist(obj: dict, key: str, path: str) -> list[float]:
    val = _need(obj, key, path)
    if not isinstance(val, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in val
    ):
        raise ScenarioError(f"{path}.{key}: expected a list of numbers")
    return [float(v) for v in val]


def _prices_from_csv(path: Path, slots: int) -> tuple[list[float], list[float] | None]:
    buy: list[float] = []
    sell: list[float] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "buy" not in reader.fieldnames:
            raise ScenarioError(f"{path}: price CSV needs a 'buy' column")
        has_sell = "sell" in reader.fieldnames
        for row in reader:
            if len(buy) == slots:
                break
            try:
                buy.append(float(row["buy"]))
                if has_sell:
                    sell.append(float(row["sell"]))
            except (TypeError, ValueError):
                raise ScenarioError(f"{path}: non-numeric price near row {len(buy) + 2}") from None
    if len(buy) < slots:
        raise ScenarioError(f"{path}: needed {slots} price rows, found {len(buy)}")
    return buy, (sell if has_sell else None)


def _parse_prices(data: dict, time: TimeGrid, base_dir: Path) -> GridPrices:
    pdata = _need(data, "prices", "scenario")
    if not isinstance(pdata, dict):
        raise ScenarioError("scenario.prices: expected an object")
    sell: list[float] | np.ndarray | None = None
    if "csv" in pdata:
        try:
            buy, sell = _prices_from_csv(base_dir / str(pdata["csv"]), time.slots)
        except OSError as exc:
            raise ScenarioError(f"scenario.prices.csv: {exc}") from None
    else:
        buy = _numlist(pdata, "buy", "scenario.prices")
        if "sell" in pdata:
            sell = _numlist(pdata, "sell", "scenario.prices")
    if sell is None:
        feed = data.get("feed_in_rate", 0.0)
        if isinstance(feed, dict):
            mode = feed.get("mode", "absolute")
            value = _num(feed, "value", "scenario.feed_in_rate")
            if mode == "absolute":
                sell = np.full(time.slots, value)
            elif mode == "fraction":
                sell = value * np.asarray(buy)
            else:
                raise ScenarioError(
                    f"scenario.feed_in_rate.mode: expected 'absolute' or 'fraction', got {mode!r}"
                )
        elif isinstance(feed, (int, float)) and not isinstance(feed, bool):
            sell = np.full(time.slots, float(feed))
        else:
            raise ScenarioError("scenario.feed_in_rate: expected a number or an object")
    return GridPrices(buy=np.asarray(buy), sell=np.asarray(sell))


def _parse_wind(wdata, path: str, time: TimeGrid, base_dir: Path) -> np.ndarray:
    if not isinstance(wdata, dict):
        raise ScenarioError(f"{path}: expected an object")
    if "fractions" in wdata:
        frac = np.asarray(_numlist(wdata, "fractions", path))
        if frac.shape != (time.slots,):
            raise ScenarioError(f"{path}.fractions: expected {time.slots} entries")
        return frac
    if "speeds_csv" in wdata:
        curve_data = wdata.get("curve", {})
        if not isinstance(curve_data, dict):
            raise ScenarioError(f"{path}.curve: expected an object")
        try:
            curve = PowerCurve(**curve_data)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}.curve: {exc}") from None
        column = str(wdata.get("column", "speed"))
        try:
            return ingest_speeds(base_dir / str(wdata["speeds_csv"]), column, time.slots, curve)
        except (ValueError, OSError) as exc:
            raise ScenarioError(f"{path}.speeds_csv: {exc}") from None
    raise ScenarioError(f"{path}: needs either 'fractions' or 'speeds_csv'")


def _parse_user(udata: dict, path: str) -> UserParams:
    try:
        return UserParams(
            total_kwh=_num(udata, "total_kwh", path),
            min_kw=_numlist(udata, "min", path),
            max_kw=_numlist(udata, "max", path),
            preferred_kw=_numlist(udata, "preferred", path),
            beta=_num(udata, "beta", path),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def _parse_storage(sdata, path: str) -> StorageParams:
    if not isinstance(sdata, dict):
        raise ScenarioError(f"{path}: expected an object")
    try:
        return StorageParams(
            capacity_kwh=_num(sdata, "capacity", path),
            dod=_num(sdata, "dod", path),
            max_charge_kw=_num(sdata, "max_charge", path),
            max_discharge_kw=_num(sdata, "max_discharge", path),
            charge_eff=_num(sdata, "eff_c", path),
            discharge_eff=_num(sdata, "eff_d", path),
            cost_per_kwh=_num(sdata, "cs", path),
            initial_kwh=_num(sdata, "initial", path),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from None


def scenario_from_dict(data: dict, base_dir: Path | str = ".") -> Scenario:
    base_dir = Path(base_dir)
    tdata = data.get("time", {})
    if not isinstance(tdata, dict):
        raise ScenarioError("scenario.time: expected an object")
    try:
        time = TimeGrid(
            slots=int(_num(tdata, "T", "scenario.time", default=24)),
            slot_hours=_num(tdata, "slot_hours", "scenario.time", default=1.0),
        )
    except ValueError as exc:
        raise ScenarioError(f"scenario.time: {exc}") from None
    prices = _parse_prices(data, time, base_dir)
    mlist = _need(data, "microgrids", "scenario")
    if not isinstance(mlist, list) or not mlist:
        raise ScenarioError("scenario.microgrids: expected a nonempty list")
    mgs = []
    for k, mdata in enumerate(mlist):
        path = f"scenario.microgrids[{k}]"
        if not isinstance(mdata, dict):
            raise ScenarioError(f"{path}: expected an object")
        wdata = _need(mdata, "wind", path)
        users_data = _need(mdata, "users", path)
        if not isinstance(users_data, list) or not users_data:
            raise ScenarioError(f"{path}.users: expected a nonempty list")
        try:
            mg = MicrogridParams(
                id=str(_need(mdata, "id", path)),
                wind_capacity_kw=_num(
                    wdata if isinstance(wdata, dict) else {}, "capacity_kw", f"{path}.wind"
                ),
                wind_fraction=_parse_wind(wdata, f"{path}.wind", time, base_dir),
                max_buy_kw=_num(mdata, "max_buy_kw", path),
                max_sell_kw=_num(mdata, "max_sell_kw", path),
                inelastic_kw=_numlist(mdata, "inelastic", path),
                users=tuple(
                    _parse_user(u, f"{path}.users[{j}]") for j, u in enumerate(users_data)
                ),
                storage=_parse_storage(_need(mdata, "storage", path), f"{path}.storage"),
            )
        except ScenarioError:
            raise
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"{path}: {exc}") from None
        mgs.append(mg)
    return Scenario(time=time, prices=prices, microgrids=tuple(mgs))


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "time": {"T": scenario.time.slots, "slot_hours": scenario.time.slot_hours},
        "prices": {
            "buy": scenario.prices.buy.tolist(),
            "sell": scenario.prices.sell.tolist(),
        },
        "microgrids": [
            {
                "id": mg.id,
                "wind": {
                    "capacity_kw": mg.wind_capacity_kw,
                    "fractions": mg.wind_fraction.tolist(),
                },
                "max_buy_kw": mg.max_buy_kw,
                "max_sell_kw": mg.max_sell_kw,
                "inelastic": mg.inelastic_kw.tolist(),
                "users": [
                    {
                        "total_kwh": u.total_kwh,
                        "min": u.min_kw.tolist(),
                        "max": u.max_kw.tolist(),
                        "preferred": u.preferred_kw.tolist(),
                        "beta": u.beta,
                    }
                    for u in mg.users
                ],
                "storage": {
                    "capacity": mg.storage.capacity_kwh,
                    "dod": mg.storage.dod,
                    "max_charge": mg.storage.max_charge_kw,
                    "max_discharge": mg.storage.max_discharge_kw,
                    "eff_c": mg.storage.charge_eff,
                    "eff_d": mg.storage.discharge_eff,
                    "cs": mg.storage.cost_per_kwh,
                    "initial": mg.storage.initial_kwh,
                },
            }
            for mg in scenario.microgrids
        ],
    }


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: expected a JSON object at top level")
    return scenario_from_dict(data, base_dir=path.parent)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2, sort_keys=True) + "\n")


def scenarios_equal(a: Scenario, b: Scenario) -> bool:
    """Exact field-by-field equality, used for round-trip checks."""
    da, db = scenario_to_dict(a), scenario_to_dict(b)

    def same(x, y) -> bool:
        if isinstance(x, dict):
            return isinstance(y, dict) and x.keys() == y.keys() and all(
                same(x[k], y[k]) for k in x
            )
        if isinstance(x, list):
            return isinstance(y, list) and len(x) == len(y) and all(
                same(p, q) for p, q in zip(x, y)
            )
        return x == y

    return same(da, db)


# ---------------------------------------------------------------------------
# deterministic synthesis

# per-microgrid patterns, cycled when more than three are requested: the
# first site is wind-rich with an evening-peaking (residential) load, the
# other two are larger but less windy with daytime (commercial) load peaks
_WIND_CAP = (600.0, 1000.0, 1000.0)
_GRID_CAP = (500.0, 300.0, 300.0)
_BETA = (1.0, 0.5, 0.5)
_CHARGE = (30.0, 40.0, 50.0)
_STORE = (100.0, 200.0, 200.0)
_SPEED_MEAN = (8.5, 6.5, 7.0)
_SPEED_AMP = (3.0, 2.5, 2.5)
_SPEED_PEAK_H = (4.0, 12.0, 9.0)
_STYLE = ("residential", "commercial", "commercial")

_STORAGE_EFF = 0.95
_STORAGE_COST = 0.01
_DOD = 0.8
_FEED_IN = 0.1


def _bump(hours: np.ndarray, center: float, width: float) -> np.ndarray:
    d = np.minimum(np.abs(hours - center), 24.0 - np.abs(hours - center))
    return np.exp(-((d / width) ** 2))


def generate_scenario(
    microgrids: int = 3,
    users: int = 1,
    seed: int = 0,
    time: TimeGrid = TimeGrid(),
) -> Scenario:
    """Synthesize a coherent instance.  Same arguments, same scenario."""
    if microgrids < 1:
        raise ValueError("need at least one microgrid")
    if users < 1:
        raise ValueError("need at least one user per microgrid")
    rng = np.random.default_rng(seed)
    t = time.slots
    hours = np.arange(t) * (24.0 / t)

    buy = 0.102 + 0.054 * _bump(hours, 15.5, 4.2) + rng.uniform(0.0, 0.004, t)
    prices = GridPrices(buy=buy, sell=np.full(t, _FEED_IN))

    mgs = []
    for a in range(microgrids):
        p = a % 3
        jitter = 0.0 if a < 3 else rng.uniform(-0.4, 0.4)
        speeds = (
            _SPEED_MEAN[p] + jitter
            + _SPEED_AMP[p] * np.cos(2.0 * np.pi * (hours - _SPEED_PEAK_H[p]) / 24.0)
            + rng.normal(0.0, 0.5, t)
        )
        frac = np.asarray(power_fraction(np.clip(speeds, 0.0, None)))

        if _STYLE[p] == "residential":
            base = 150.0 + 110.0 * _bump(hours, 20.0, 3.0) + 35.0 * _bump(hours, 8.0, 2.5)
        else:
            base = 120.0 + 140.0 * _bump(hours, 13.0, 3.5)
        inelastic = np.clip(base + rng.normal(0.0, 6.0, t), 0.0, None)

        user_list = []
        for k in range(users):
            if _STYLE[p] == "residential":
                pref = 40.0 + 55.0 * _bump(hours, 19.0 + k, 3.5)
            else:
                pref = 45.0 + 65.0 * _bump(hours, 12.0 + k, 4.0)
            pref = (pref / users) * rng.uniform(0.95, 1.05)
            user_list.append(
                UserParams(
                    total_kwh=float(pref.sum()),
                    min_kw=0.2 * pref,
                    max_kw=pref + 70.0 / users,
                    preferred_kw=pref,
                    beta=float(_BETA[p]),
                )
            )

        # keep every slot coverable even with zero wind in the tank
        headroom = 0.92 * (_GRID_CAP[p] + _CHARGE[p])
        min_total = sum(u.min_kw for u in user_list)
        inelastic = np.minimum(inelastic, np.maximum(headroom - min_total, 0.0))

        cap = _STORE[p]
        mgs.append(
            MicrogridParams(
                id=f"mg{a + 1}",
                wind_capacity_kw=_WIND_CAP[p],
                wind_fraction=frac,
                max_buy_kw=_GRID_CAP[p],
                max_sell_kw=_GRID_CAP[p],
                inelastic_kw=inelastic,
                users=tuple(user_list),
                storage=StorageParams(
                    capacity_kwh=cap,
                    dod=_DOD,
                    max_charge_kw=_CHARGE[p],
                    max_discharge_kw=_CHARGE[p],
                    charge_eff=_STORAGE_EFF,
                    discharge_eff=_STORAGE_EFF,
                    cost_per_kwh=_STORAGE_COST,
                    initial_kwh=0.6 * cap,
                ),
            )
        )
    return Scenario(time=time, prices=prices, microgrids=tuple(mgs))
