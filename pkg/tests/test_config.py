import pytest

from trifuse.core.config import Settings, build_run_config, load_run_config, parse_config_text
from trifuse.core.exceptions import ConfigError
from trifuse.models.schemas import DegradationLevel


def test_defaults_are_valid():
    config = build_run_config({})
    assert config.seed == 42
    assert config.timesteps == 200
    assert config.sampling_steps == 5
    assert config.wavelet_levels == 1
    assert config.learning_rate == pytest.approx(1e-4)
    assert config.esm_dilations == [1, 2]


def test_parse_config_text_handles_comments_and_blank_lines():
    text = "# toy run\n\nseed = 3  # inline\nesm_dilations = 1, 2, 4\n"
    assert parse_config_text(text) == {"seed": "3", "esm_dilations": "1, 2, 4"}


@pytest.mark.parametrize("text", ["seed 3\n", "= 3\n", "seed = 1\nseed = 2\n"])
def test_parse_config_text_rejects_malformed_lines(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_file_values_are_coerced_and_overrides_win(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("seed = 5\niters = 20\nesm_dilations = 1,3\n", encoding="utf-8")
    config = load_run_config(path, {"iters": 7, "seed": None})
    assert config.seed == 5
    assert config.iters == 7
    assert config.esm_dilations == [1, 3]


def test_unknown_key_is_rejected(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("sede = 5\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="sede"):
        load_run_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.conf")


@pytest.mark.parametrize(
    "values",
    [
        {"beta_start": 0.03, "beta_end": 0.02},
        {"sampling_steps": 300},
        {"train_frac": 0.9, "val_frac": 0.2},
        {"patch_size": 60},
        {"wavelet_levels": 4},
        {"base_channels": 30, "num_heads": 4},
        {"esm_dilations": "0,1"},
        {"esm_attention": "global"},
        {"moderate_gamma": 1.2},
    ],
)
def test_invalid_values_raise_config_error(values):
    with pytest.raises(ConfigError):
        build_run_config(values)


def test_size_multiple_covers_wavelet_and_pooling():
    config = build_run_config({"wavelet_levels": 2, "esm_attention_pool": 4, "patch_size": 64})
    assert config.min_image_size == 16
    assert config.size_multiple == 16
    config = build_run_config({"wavelet_levels": 1, "esm_attention_pool": 8, "patch_size": 64})
    assert config.size_multiple == 16


def test_degradation_presets_darken_monotonically():
    config = build_run_config({})
    light, moderate, dense = (config.degradation_params(level) for level in DegradationLevel)
    assert light.gamma < moderate.gamma < dense.gamma
    assert light.gain > moderate.gain > dense.gain
    assert (light.gamma, light.gain, light.noise_sigma) == (1.5, 0.7, 0.01)
    assert (dense.gamma, dense.gain, dense.noise_sigma) == (3.0, 0.25, 0.03)


def test_sub_configs_mirror_run_config():
    config = build_run_config({"eta": 0.5, "sampling_steps": 10})
    assert config.cnm_config().condition_channels == config.channels
    assert config.esm_config().dilation_rates == [1, 2]
    sampler = config.sampler_config()
    assert sampler.timestep_subsequence == [200, 180, 160, 140, 120, 100, 80, 60, 40, 20]


def test_settings_read_prefixed_environment(monkeypatch):
    monkeypatch.setenv("TRIFUSE_LOG_LEVEL", "DEBUG")
    monkeypatch.setenv("TRIFUSE_THREADS", "3")
    settings = Settings()
    assert settings.LOG_LEVEL == "DEBUG"
    assert settings.THREADS == 3
