"""Tests for experiment configuration loading and validation."""

import json

import pytest

from sake.config import ExperimentConfig, SensitivityConfig, SystemConfig
from sake.errors import ConfigurationError
from sake.pilots import STAGE1_BUDGET

MINIMAL = """
[[systems]]
name = "lin"
generator = "linear"
params = { dim = 2, true_lag = 2, n_traj = 12, T = 40 }
"""


def _write(tmp_path, text, name="experiment.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoad:
    def test_minimal_defaults(self, tmp_path):
        config = ExperimentConfig.load(_write(tmp_path, MINIMAL))
        assert config.systems == [
            SystemConfig(
                name="lin",
                generator="linear",
                params={"dim": 2, "true_lag": 2, "n_traj": 12, "T": 40},
            )
        ]
        assert config.candidate_grid.windows == tuple(range(1, 17))
        assert config.methods == ("sake", "system-core", "direct3", "direct4", "asha")
        assert config.seeds == (0, 1, 2)
        assert config.budgets.stage1 == STAGE1_BUDGET
        assert config.base_dir == tmp_path
        assert config.split.fractions == (0.8, 0.1, 0.1)

    def test_sections(self, tmp_path):
        text = """
grid = "1..8"
methods = ["sake", "asha"]
""" + MINIMAL + """
[anchors]
rho = 0.1

[anchors.bootstrap]
resamples = 50

[budgets.stage1]
epochs = 3

[budgets.full]
epochs = 40

[selector]
kappa = 2.0

[[perturbations]]
kind = "gaussian_noise"
sigma = 0.01
"""
        config = ExperimentConfig.load(_write(tmp_path, text))
        assert config.grid == "1..8"
        assert config.methods == ("sake", "asha")
        assert config.systems[0].name == "lin"
        assert config.anchors.rho == 0.1
        assert config.anchors.boot.resamples == 50
        assert config.budgets.stage1.epochs == 3
        assert config.budgets.stage1.max_pairs == STAGE1_BUDGET.max_pairs
        assert config.budgets.full.epochs == 40
        assert not config.budgets.full.bound
        assert config.selector.kappa == 2.0
        assert config.perturbations[0].label == "noise0.01"

    def test_json(self, tmp_path):
        data = {"systems": [{"name": "d", "generator": "diffusion2d", "params": {"grid": 8}}]}
        path = _write(tmp_path, json.dumps(data), name="experiment.json")
        assert ExperimentConfig.load(path).systems[0].generator == "diffusion2d"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            ExperimentConfig.load(tmp_path / "nope.toml")


class TestUnknownKeys:
    def test_top_level(self, tmp_path):
        with pytest.raises(ConfigurationError, match="bogus"):
            ExperimentConfig.load(_write(tmp_path, "bogus = 1\n" + MINIMAL))

    def test_nested_key_is_dotted(self, tmp_path):
        text = MINIMAL + "\n[selector]\nkapa = 2.0\n"
        with pytest.raises(ConfigurationError, match="selector.kapa"):
            ExperimentConfig.load(_write(tmp_path, text))

    def test_budget_section(self, tmp_path):
        text = MINIMAL + "\n[budgets.stage3]\nepochs = 1\n"
        with pytest.raises(ConfigurationError, match="budgets.stage3"):
            ExperimentConfig.load(_write(tmp_path, text))


class TestValidation:
    def _config(self, **overrides):
        return ExperimentConfig(systems=[SystemConfig(name="lin", generator="linear")], **overrides)

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError, match="unknown method"):
            self._config(methods=("sake", "grid-search"))

    def test_duplicate_systems(self):
        system = SystemConfig(name="lin", generator="linear")
        with pytest.raises(ConfigurationError, match="duplicate"):
            ExperimentConfig(systems=[system, system])

    def test_no_systems(self):
        with pytest.raises(ConfigurationError, match="systems"):
            ExperimentConfig(systems=[])

    def test_generator_or_input(self):
        with pytest.raises(ConfigurationError, match="exactly one"):
            SystemConfig(name="x")
        with pytest.raises(ConfigurationError, match="exactly one"):
            SystemConfig(name="x", generator="linear", input="pool.skt")

    def test_unknown_generator(self):
        with pytest.raises(ConfigurationError, match="unknown generator"):
            SystemConfig(name="x", generator="lorenz")

    def test_missing_input_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="not found"):
            ExperimentConfig(systems=[SystemConfig(name="f", input="pool.skt")], base_dir=tmp_path)

    def test_bad_grid(self):
        with pytest.raises(ConfigurationError):
            self._config(grid="4,2")

    def test_negative_eps(self):
        with pytest.raises(ConfigurationError, match="eps"):
            self._config(eps=(-0.1,))

    def test_anchor_source(self):
        with pytest.raises(ConfigurationError, match="anchor_source"):
            self._config(anchor_source="oracle")

    def test_schema_version(self):
        with pytest.raises(ConfigurationError, match="schema_version"):
            self._config(schema_version=2)

    def test_representation(self):
        with pytest.raises(ConfigurationError, match="representation"):
            self._config(representations=("autoencoder",))
        assert self._config().representation_list == ("pca",)


class TestSaveAndHash:
    def test_round_trip_keeps_hash(self, tmp_path):
        config = ExperimentConfig.load(_write(tmp_path, 'grid = "2,4,8"\n' + MINIMAL))
        saved = config.save(tmp_path / "out" / "config.toml")
        reloaded = ExperimentConfig.load(saved)
        assert reloaded == config
        assert reloaded.config_hash() == config.config_hash()

    def test_hash_changes_with_content(self):
        a = ExperimentConfig(systems=[SystemConfig(name="lin", generator="linear")])
        b = ExperimentConfig(systems=[SystemConfig(name="lin", generator="linear")], seeds=(0,))
        assert a.config_hash() != b.config_hash()

    def test_bootstrap_table_name(self):
        data = ExperimentConfig(systems=[SystemConfig(name="lin", generator="linear")]).to_dict()
        assert "bootstrap" in data["anchors"]
        assert "boot" not in data["anchors"]


class TestSensitivity:
    def test_disabled_by_default(self):
        assert SensitivityConfig().variants() == []

    def test_one_axis_at_a_time(self):
        sensitivity = SensitivityConfig(
            enabled=True, rho=(0.1,), tau_pl=(), kappa=(2.0,), resamples=(), eps=()
        )
        variants = sensitivity.variants()
        assert variants == [("rho", 0.1), ("kappa", 2.0)]
