"""Scenario files: parsing, emission, synthesis, and their error paths."""

import copy
import json

import numpy as np
import pytest

from mgtrade.benchmark import precheck_scenario
from mgtrade.domain import ScenarioError
from mgtrade.scenario_io import (
    generate_scenario,
    load_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
    scenarios_equal,
)
from mgtrade.wind import PowerCurve, power_fraction


def minimal_dict() -> dict:
    """Smallest well-formed scenario: one microgrid, two slots."""
    return {
        "time": {"T": 2, "slot_hours": 1.0},
        "prices": {"buy": [0.2, 0.25], "sell": [0.05, 0.05]},
        "microgrids": [
            {
                "id": "m1",
                "wind": {"capacity_kw": 50.0, "fractions": [0.4, 0.6]},
                "max_buy_kw": 100.0,
                "max_sell_kw": 100.0,
                "inelastic": [10.0, 12.0],
                "users": [
                    {
                        "total_kwh": 8.0,
                        "min": [0.0, 0.0],
                        "max": [8.0, 8.0],
                        "preferred": [4.0, 4.0],
                        "beta": 0.5,
                    }
                ],
                "storage": {
                    "capacity": 20.0,
                    "dod": 0.8,
                    "max_charge": 5.0,
                    "max_discharge": 5.0,
                    "eff_c": 0.95,
                    "eff_d": 0.95,
                    "cs": 0.01,
                    "initial": 10.0,
                },
            }
        ],
    }


class TestRoundTrip:
    def test_dict_round_trip_is_exact(self):
        scn = generate_scenario(seed=5)
        again = scenario_from_dict(scenario_to_dict(scn))
        assert scenarios_equal(scn, again)

    def test_file_round_trip(self, tmp_path):
        scn = generate_scenario(microgrids=2, users=2, seed=11)
        path = tmp_path / "scn.json"
        save_scenario(scn, path)
        assert scenarios_equal(scn, load_scenario(path))

    def test_saved_files_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        save_scenario(generate_scenario(seed=4), a)
        save_scenario(generate_scenario(seed=4), b)
        assert a.read_bytes() == b.read_bytes()

    def test_different_seeds_differ(self):
        assert not scenarios_equal(generate_scenario(seed=1), generate_scenario(seed=2))

    def test_minimal_dict_parses(self):
        scn = scenario_from_dict(minimal_dict())
        assert scn.ids == ("m1",)
        assert scn.time.slots == 2
        np.testing.assert_array_equal(scn.prices.sell, [0.05, 0.05])


class TestFieldErrors:
    def test_missing_prices(self):
        data = minimal_dict()
        del data["prices"]
        with pytest.raises(ScenarioError, match=r"scenario\.prices"):
            scenario_from_dict(data)

    def test_missing_microgrid_id(self):
        data = minimal_dict()
        del data["microgrids"][0]["id"]
        with pytest.raises(ScenarioError, match=r"scenario\.microgrids\[0\]\.id"):
            scenario_from_dict(data)

    def test_non_numeric_user_field(self):
        data = minimal_dict()
        data["microgrids"][0]["users"][0]["beta"] = "high"
        with pytest.raises(ScenarioError, match=r"users\[0\]\.beta"):
            scenario_from_dict(data)

    def test_empty_microgrid_list(self):
        data = minimal_dict()
        data["microgrids"] = []
        with pytest.raises(ScenarioError, match="nonempty list"):
            scenario_from_dict(data)

    def test_wind_without_a_source(self):
        data = minimal_dict()
        data["microgrids"][0]["wind"] = {"capacity_kw": 50.0}
        with pytest.raises(ScenarioError, match="'fractions' or 'speeds_csv'"):
            scenario_from_dict(data)

    def test_wrong_fraction_count(self):
        data = minimal_dict()
        data["microgrids"][0]["wind"]["fractions"] = [0.5]
        with pytest.raises(ScenarioError, match="expected 2 entries"):
            scenario_from_dict(data)

    def test_storage_dod_out_of_range(self):
        data = minimal_dict()
        data["microgrids"][0]["storage"]["dod"] = 1.5
        with pytest.raises(ScenarioError, match=r"storage"):
            scenario_from_dict(data)

    def test_bad_time_grid(self):
        data = minimal_dict()
        data["time"]["T"] = 0
        with pytest.raises(ScenarioError, match=r"scenario\.time"):
            scenario_from_dict(data)

    def test_boolean_is_not_a_number(self):
        data = minimal_dict()
        data["microgrids"][0]["max_buy_kw"] = True
        with pytest.raises(ScenarioError, match="expected a number"):
            scenario_from_dict(data)


class TestPriceForms:
    def base_without_sell(self) -> dict:
        data = minimal_dict()
        del data["prices"]["sell"]
        return data

    def test_feed_in_number(self):
        data = self.base_without_sell()
        data["feed_in_rate"] = 0.07
        scn = scenario_from_dict(data)
        np.testing.assert_array_equal(scn.prices.sell, [0.07, 0.07])

    def test_feed_in_absolute_object(self):
        data = self.base_without_sell()
        data["feed_in_rate"] = {"mode": "absolute", "value": 0.06}
        scn = scenario_from_dict(data)
        np.testing.assert_array_equal(scn.prices.sell, [0.06, 0.06])

    def test_feed_in_fraction_of_buy(self):
        data = self.base_without_sell()
        data["feed_in_rate"] = {"mode": "fraction", "value": 0.5}
        scn = scenario_from_dict(data)
        np.testing.assert_allclose(scn.prices.sell, [0.10, 0.125])

    def test_bad_feed_in_mode(self):
        data = self.base_without_sell()
        data["feed_in_rate"] = {"mode": "percent", "value": 10.0}
        with pytest.raises(ScenarioError, match="absolute.*fraction"):
            scenario_from_dict(data)

    def test_explicit_sell_wins_over_feed_in(self):
        data = minimal_dict()
        data["feed_in_rate"] = 0.99
        scn = scenario_from_dict(data)
        np.testing.assert_array_equal(scn.prices.sell, [0.05, 0.05])

    def test_prices_from_csv(self, tmp_path):
        (tmp_path / "prices.csv").write_text("buy,sell\n0.2,0.04\n0.3,0.06\n")
        data = minimal_dict()
        data["prices"] = {"csv": "prices.csv"}
        scn = scenario_from_dict(data, base_dir=tmp_path)
        np.testing.assert_array_equal(scn.prices.buy, [0.2, 0.3])
        np.testing.assert_array_equal(scn.prices.sell, [0.04, 0.06])

    def test_csv_buy_only_plus_feed_in(self, tmp_path):
        (tmp_path / "prices.csv").write_text("buy\n0.2\n0.3\n")
        data = self.base_without_sell()
        data["prices"] = {"csv": "prices.csv"}
        data["feed_in_rate"] = {"mode": "fraction", "value": 0.1}
        scn = scenario_from_dict(data, base_dir=tmp_path)
        np.testing.assert_allclose(scn.prices.sell, [0.02, 0.03])

    def test_csv_missing_buy_column(self, tmp_path):
        (tmp_path / "prices.csv").write_text("price\n0.2\n0.3\n")
        data = minimal_dict()
        data["prices"] = {"csv": "prices.csv"}
        with pytest.raises(ScenarioError, match="'buy' column"):
            scenario_from_dict(data, base_dir=tmp_path)

    def test_csv_too_short(self, tmp_path):
        (tmp_path / "prices.csv").write_text("buy\n0.2\n")
        data = minimal_dict()
        data["prices"] = {"csv": "prices.csv"}
        with pytest.raises(ScenarioError, match="needed 2 price rows"):
            scenario_from_dict(data, base_dir=tmp_path)

    def test_csv_file_missing(self):
        data = minimal_dict()
        data["prices"] = {"csv": "nope.csv"}
        with pytest.raises(ScenarioError, match=r"prices\.csv"):
            scenario_from_dict(data, base_dir="/nonexistent")


class TestWindRoutes:
    def test_speeds_csv(self, tmp_path):
        (tmp_path / "wind.csv").write_text("speed\n8.0\n13.0\n")
        data = minimal_dict()
        data["microgrids"][0]["wind"] = {"capacity_kw": 50.0, "speeds_csv": "wind.csv"}
        scn = scenario_from_dict(data, base_dir=tmp_path)
        np.testing.assert_allclose(
            scn.microgrids[0].wind_fraction, power_fraction(np.array([8.0, 13.0])))

    def test_speeds_csv_custom_curve_and_column(self, tmp_path):
        (tmp_path / "wind.csv").write_text("v\n5.0\n30.0\n")
        data = minimal_dict()
        data["microgrids"][0]["wind"] = {
            "capacity_kw": 50.0,
            "speeds_csv": "wind.csv",
            "column": "v",
            "curve": {"cut_in": 2.0, "rated": 10.0, "cut_out": 28.0},
        }
        scn = scenario_from_dict(data, base_dir=tmp_path)
        curve = PowerCurve(cut_in=2.0, rated=10.0, cut_out=28.0)
        np.testing.assert_allclose(
            scn.microgrids[0].wind_fraction,
            power_fraction(np.array([5.0, 30.0]), curve))

    def test_bad_curve(self, tmp_path):
        (tmp_path / "wind.csv").write_text("speed\n8.0\n9.0\n")
        data = minimal_dict()
        data["microgrids"][0]["wind"] = {
            "capacity_kw": 50.0,
            "speeds_csv": "wind.csv",
            "curve": {"cut_in": 10.0, "rated": 5.0},
        }
        with pytest.raises(ScenarioError, match=r"wind\.curve"):
            scenario_from_dict(data, base_dir=tmp_path)

    def test_missing_speeds_file(self):
        data = minimal_dict()
        data["microgrids"][0]["wind"] = {"capacity_kw": 50.0, "speeds_csv": "gone.csv"}
        with pytest.raises(ScenarioError, match="speeds_csv"):
            scenario_from_dict(data, base_dir="/nonexistent")


class TestGenerated:
    def test_default_shape(self):
        scn = generate_scenario()
        assert scn.ids == ("mg1", "mg2", "mg3")
        assert scn.time.slots == 24
        assert all(len(mg.users) == 1 for mg in scn.microgrids)

    def test_site_parameters(self):
        scn = generate_scenario()
        assert [mg.wind_capacity_kw for mg in scn.microgrids] == [600.0, 1000.0, 1000.0]
        assert [mg.max_buy_kw for mg in scn.microgrids] == [500.0, 300.0, 300.0]
        assert [mg.users[0].beta for mg in scn.microgrids] == [1.0, 0.5, 0.5]
        assert [mg.storage.max_charge_kw for mg in scn.microgrids] == [30.0, 40.0, 50.0]
        assert [mg.storage.capacity_kwh for mg in scn.microgrids] == [100.0, 200.0, 200.0]
        for mg in scn.microgrids:
            st = mg.storage
            assert st.charge_eff == st.discharge_eff == 0.95
            assert st.cost_per_kwh == 0.01
            assert st.dod == 0.8
            assert st.initial_kwh == 0.6 * st.capacity_kwh
        np.testing.assert_array_equal(scn.prices.sell, np.full(24, 0.1))

    def test_fourth_site_repeats_the_cycle(self):
        scn = generate_scenario(microgrids=4)
        assert scn.microgrids[3].wind_capacity_kw == 600.0
        assert scn.ids[3] == "mg4"

    def test_generated_is_feasible(self):
        for kwargs in ({"microgrids": 1, "seed": 8},
                       {"microgrids": 5, "users": 2, "seed": 9},
                       {"microgrids": 2, "seed": 10}):
            precheck_scenario(generate_scenario(**kwargs))

    def test_wind_fractions_in_range(self):
        scn = generate_scenario(seed=13)
        for mg in scn.microgrids:
            assert np.all(mg.wind_fraction >= 0.0)
            assert np.all(mg.wind_fraction <= 1.0)

    def test_bad_counts_rejected(self):
        with pytest.raises(ValueError):
            generate_scenario(microgrids=0)
        with pytest.raises(ValueError):
            generate_scenario(users=0)


class TestLoadErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="no such file"):
            load_scenario(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ScenarioError, match="invalid JSON"):
            load_scenario(path)

    def test_top_level_must_be_object(self, tmp_path):
        path = tmp_path / "list.json"
        path.write_text(json.dumps([1, 2, 3]))
        with pytest.raises(ScenarioError, match="JSON object"):
            load_scenario(path)

    def test_relative_csv_resolves_next_to_the_scenario(self, tmp_path):
        (tmp_path / "prices.csv").write_text("buy,sell\n0.2,0.04\n0.3,0.06\n")
        data = minimal_dict()
        data["prices"] = {"csv": "prices.csv"}
        path = tmp_path / "scn.json"
        path.write_text(json.dumps(data))
        scn = load_scenario(path)
        np.testing.assert_array_equal(scn.prices.buy, [0.2, 0.3])


def test_deep_copy_of_dict_does_not_alias(tmp_path):
    # mutating a parsed scenario's source dict must not reach the scenario
    data = minimal_dict()
    snapshot = copy.deepcopy(data)
    scn = scenario_from_dict(data)
    data["microgrids"][0]["inelastic"][0] = 999.0
    assert scenarios_equal(scn, scenario_from_dict(snapshot))
