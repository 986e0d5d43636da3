import json
import os
import tempfile
import unittest

import numpy as np
import pandas as pd
from parameterized import parameterized

from aoiprobe.channel import IidChannel, MarkovChannel
from aoiprobe.config import ConfigParseError, InvalidConfig
from aoiprobe.export import select, write_csv, write_dat, write_metadata
from aoiprobe.presets import (
    PRESETS,
    build_experiment,
    channel_from_dict,
    energy_from_dict,
    preset_sections,
    resolve_sections,
)


IID = {"success_probs": [0.5], "occurrence_probs": [1.0]}
MARKOV = {"success_probs": [0.5], "transition_matrix": [[1.0]]}


class TestPresets(unittest.TestCase):
    @parameterized.expand([(name,) for name in PRESETS])
    def test_builds(self, name):
        exp = build_experiment(preset_sections(name), name)
        assert exp.markov == (name in ("fig3", "fig4", "fig5-markov", "fig6-markov"))
        assert exp.cfg.min_energy <= exp.cfg.buffer_capacity
        for rate in exp.lambdas:
            exp.energy_at(rate)

    def test_sections_are_copies(self):
        sections = preset_sections("fig2")
        sections["system"]["buffer_capacity"] = 1
        assert PRESETS["fig2"]["system"]["buffer_capacity"] == 12
        self.assertRaises(ConfigParseError, preset_sections, "fig9")

    def test_markov_initial_state(self):
        channel, initial = channel_from_dict(dict(PRESETS["fig3"]["channel"]))
        assert isinstance(channel, MarkovChannel)
        assert channel.success_probs[initial] == 0.9

    @parameterized.expand(
        [
            ("no_probs", {"occurrence_probs": [1.0]}, ConfigParseError),
            ("both_models", {**IID, **MARKOV}, ConfigParseError),
            ("neither_model", {"success_probs": [0.5]}, ConfigParseError),
            ("iid_initial_state", {**IID, "initial_state": 1}, ConfigParseError),
            ("unknown_key", {**IID, "colour": 1}, ConfigParseError),
            ("bad_initial_state", {**MARKOV, "initial_state": 2}, InvalidConfig),
        ]
    )
    def test_channel_errors(self, _name, d, error):
        self.assertRaises(error, channel_from_dict, d)

    def test_energy(self):
        energy = energy_from_dict({"support": [0, 2], "probs": [0.5, 0.5]})
        assert energy.rate == 1.0 and energy.harvest is None
        assert energy_from_dict({"rate": 0.4}, rate=0.8).rate == 0.8
        self.assertRaises(ConfigParseError, energy_from_dict, {"rate": 0.4, "support": [1], "probs": [1.0]})
        self.assertRaises(ConfigParseError, energy_from_dict, {"support": [1], "probs": [1.0]}, 0.5)
        self.assertRaises(ConfigParseError, energy_from_dict, {})
        self.assertRaises(ConfigParseError, energy_from_dict, {"rate": 0.4, "harvest": {"h13": 0.1}})

    def test_layering(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "conf.toml")
            with open(path, "w") as f:
                f.write(
                    "[system]\nage_cap = 10\n\n"
                    "[channel]\nsuccess_probs = [0.8]\noccurrence_probs = [1.0]\n\n"
                    "[run.default]\nseeds = 3\n\n[run.quick]\nhorizon = 100\n"
                )
            sections = resolve_sections("fig2", path, "quick", {"run.seeds": 7, "system.discount": None})

        assert sections["system"]["age_cap"] == 10
        assert sections["system"]["buffer_capacity"] == 12  # kept from the preset
        assert sections["system"]["discount"] == 0.99
        assert sections["channel"] == {"success_probs": [0.8], "occurrence_probs": [1.0]}
        assert sections["run"]["horizon"] == 100
        assert sections["run"]["seeds"] == 7
        assert isinstance(build_experiment(sections).channel, IidChannel)

        self.assertRaises(ConfigParseError, resolve_sections, None, None, "quick")

    def test_build_errors(self):
        sections = preset_sections("fig2")
        sections["run"]["colour"] = 1
        self.assertRaises(ConfigParseError, build_experiment, sections)
        self.assertRaises(ConfigParseError, build_experiment, {"system": {}, "channel": {}})
        self.assertRaises(ConfigParseError, build_experiment, {"plot": {}})


class TestExport(unittest.TestCase):
    def test_write_dat_skips_non_finite(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_dat([0, 1, 2, 3], [1.5, np.inf, np.nan, 4.0], os.path.join(tmp, "sub", "t.dat"), "E T_th")
            with open(path) as f:
                assert f.read() == "# E T_th\n0 1.5\n3 4\n"
            assert os.listdir(os.path.dirname(path)) == ["t.dat"]

    def test_write_csv_and_select(self):
        df = pd.DataFrame({"E": [0, 0, 1], "H": [1, 2, 1], "T_th": [2.0, np.nan, 3.0]})
        assert select(df, E=0, H=2).index.tolist() == [1]
        assert len(select(df)) == 3
        with tempfile.TemporaryDirectory() as tmp:
            path = write_csv(df, os.path.join(tmp, "t.csv"))
            back = pd.read_csv(path)
        assert back["E"].tolist() == [0, 0, 1]
        assert np.isnan(back["T_th"][1])

    def test_metadata(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = write_metadata(tmp, "solve", {"system": {"discount": np.float64(0.9)}, "tol": float("inf")}, "0.1.0")
            with open(path) as f:
                data = json.load(f)
        assert list(data) == ["command", "system", "tol", "version", "timestamp"]
        assert data["system"]["discount"] == 0.9
        assert data["tol"] == "inf"
