import pytest

from peerstyle.config import ConfigError, TrainConfig, apply_overrides, dump_config, load_config, parse_config
from peerstyle.nn import NetConfig


def test_dump_parse_round_trip():
    cfg = TrainConfig.desk(seed=11, learning_rate=1.5e-4)
    assert parse_config(dump_config(cfg)) == cfg
    full = TrainConfig()
    assert parse_config(dump_config(full)) == full


def test_partial_file_keeps_base_values():
    cfg = parse_config("[net]\nk_neighbors = 7\n[data]\nstyle_dirs = a, b\n", base=TrainConfig.desk())
    assert cfg.net.k_neighbors == 7 and cfg.net.base_width == 16
    assert cfg.data.style_dirs == ["a", "b"]


@pytest.mark.parametrize("text", [
    "[train]\nlerning_rate = 1\n",
    "[gpu]\ncount = 2\n",
    "[train]\nbatch_size = two\n",
    "[net]\nk_neighbors = 0\n",
    "[train]\ndecay_start_epoch = 500\n",
    "not an ini file",
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_overrides():
    cfg = apply_overrides(TrainConfig.desk(), ["net.k_neighbors=4", "train.seed=9", "data.crop_size=64"])
    assert (cfg.net.k_neighbors, cfg.seed, cfg.data.crop_size) == (4, 9, 64)
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), ["seed=9"])
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), ["train.nope=1"])


def test_load_config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[train]\nbeta1 = 0.9\n")
    cfg = load_config(path, ["train.seed=3"])
    assert cfg.beta1 == 0.9 and cfg.seed == 3
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.ini")


def test_full_scale_defaults():
    cfg = TrainConfig()
    assert cfg.net == NetConfig()
    assert (cfg.net.k_neighbors, cfg.net.attention_dropout, cfg.net.discriminator_noise_sigma) == (5, 0.2, 0.1)
