from pathlib import Path

import pytest

from backend.config import RunConfig, format_run_config, load_run_config, parse_config_text, write_run_config
from utils.constants import E_TRAN_MAX_PLANAR, TIMESTEP
from utils.errors import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_defaults_are_valid():
    config = RunConfig()
    assert config.strategy == "ebp-her"
    assert config.e_tran_max is None
    assert config.energy_params(E_TRAN_MAX_PLANAR).e_tran_max == E_TRAN_MAX_PLANAR


def test_parse_typed_values():
    values = parse_config_text(
        """
        # comment line
        env = RotateBlock
        seeds = 0, 1 2
        her-ratio = 0.5   # trailing comment
        hidden_sizes = 32,32
        e_tran_max = none
        """
    )
    assert values == {
        "env": "RotateBlock", "seeds": (0, 1, 2), "her_ratio": 0.5,
        "hidden_sizes": (32, 32), "e_tran_max": None,
    }


@pytest.mark.parametrize("text", ["colour = blue", "epochs 3", "epochs = three", "epochs = 1\nepochs = 2"])
def test_malformed_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


@pytest.mark.parametrize("overrides", [
    {"env": "FetchSlide"}, {"strategy": "greedy"}, {"her_ratio": 1.5}, {"gamma": 1.0},
    {"epochs": 0}, {"seeds": ()}, {"tau": 0.0}, {"optimizer": "rmsprop"}, {"inertia": (1.0, 1.0)},
])
def test_out_of_range_values_rejected(overrides):
    with pytest.raises(ConfigError):
        RunConfig(**overrides)


def test_invalid_energy_and_per_settings_surface_as_config_errors():
    with pytest.raises(ConfigError):
        RunConfig(mass=-1.0).energy_params(0.5)
    with pytest.raises(ConfigError):
        RunConfig(per_epsilon=0.0).per_config()


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("env = PlanarPickPlace\nepochs = 3\n")
    config = load_run_config(path, epochs=5, strategy=None, seeds=[4, 5])
    assert config.env == "PlanarPickPlace"
    assert config.epochs == 5
    assert config.strategy == "ebp-her"
    assert config.seeds == (4, 5)


def test_unknown_override_rejected():
    with pytest.raises(ConfigError):
        load_run_config(colour="blue")


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.cfg")


def test_written_config_loads_back(tmp_path):
    config = RunConfig(env="RotateBlock", strategy="per-her", seeds=(3,), e_tran_max=1.5,
                       hidden_sizes=(8, 8), optimizer="adam", lr_actor=0.0003)
    path = write_run_config(config, tmp_path / "out" / "run.cfg")
    assert load_run_config(path) == config
    assert "e_tran_max = 1.5" in format_run_config(config)


@pytest.mark.parametrize("name", ["planar_push.cfg", "planar_pick_place.cfg", "rotate_block.cfg", "smoke.cfg"])
def test_shipped_configs_load(name):
    config = load_run_config(CONFIG_DIR / name)
    assert config.agent_config().hidden_sizes == config.hidden_sizes


def test_timestep_reaches_the_energy_terms():
    assert RunConfig().energy_params(0.5).dt == TIMESTEP
    assert RunConfig(dt=0.02).energy_params(0.5).dt == 0.02


@pytest.mark.parametrize("overrides", [{"dt": 0.0}, {"dt": -0.04}, {"action_l2": -0.1}])
def test_timestep_and_action_penalty_ranges(overrides):
    with pytest.raises(ConfigError):
        RunConfig(**overrides)


def test_timestep_and_agent_settings_load_back(tmp_path):
    config = RunConfig(dt=0.02, action_l2=0.0, normalize_inputs=False)
    path = write_run_config(config, tmp_path / "run.cfg")
    loaded = load_run_config(path)
    assert loaded == config
    assert loaded.agent_config().action_l2 == 0.0
    assert loaded.agent_config().normalize_inputs is False


def test_push_config_uses_the_tuned_sgd_settings():
    config = load_run_config(CONFIG_DIR / "planar_push.cfg")
    assert config.optimizer == "sgd"
    assert config.lr_critic == 0.003
    assert config.action_l2 == 0.5
    assert config.normalize_inputs is True
