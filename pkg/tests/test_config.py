import pytest

from pml.config import TrainConfig, apply_overrides, load_config, parse_config, serialize
from pml.errors import ConfigError


def test_defaults_validate():
    TrainConfig().validate()


def test_parse_serialize_round_trip():
    cfg = TrainConfig(lam=0.25, beta=2.0, stage_epochs=3, mode="baseline",
                      curriculum_fractions=(0.5, 1.0), data="d.csv", out="runs/x")
    assert parse_config(serialize(cfg)) == cfg


def test_lambda_key_maps_to_lam():
    cfg = parse_config("lambda = 0.75\n")
    assert cfg.lam == 0.75
    assert "lambda = 0.75" in serialize(cfg)
    assert "lam =" not in serialize(cfg)


def test_comments_and_blank_lines_ignored():
    cfg = parse_config("# a comment\n\nsigma = 1.5  # trailing\n")
    assert cfg.sigma == 1.5


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config("learning_rates = 0.1\n")


def test_bad_value_rejected():
    with pytest.raises(ConfigError, match="batch_size"):
        parse_config("batch_size = many\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("just words\n")


def test_fractions_parse_as_tuple():
    cfg = parse_config("curriculum_fractions = 0.5,1.0\n")
    assert cfg.curriculum_fractions == (0.5, 1.0)


def test_bool_parsing():
    assert parse_config("reset_stats_each_epoch = true\n").reset_stats_each_epoch
    assert not parse_config("reset_stats_each_epoch = false\n").reset_stats_each_epoch
    with pytest.raises(ConfigError):
        parse_config("reset_stats_each_epoch = maybe\n")


def test_overrides_apply_in_order():
    cfg = apply_overrides(TrainConfig(), ["lambda=0.1", "beta=0.2", "lambda=0.3"])
    assert cfg.lam == 0.3 and cfg.beta == 0.2
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), ["lambda:0.1"])
    with pytest.raises(ConfigError):
        apply_overrides(TrainConfig(), ["nope=1"])


@pytest.mark.parametrize("line,frag", [
    ("sigma = 0", "sigma"),
    ("mode = hybrid", "mode"),
    ("optimizer = lbfgs", "optimizer"),
    ("decoder = mode", "decoder"),
    ("momentum = 1.5", "momentum"),
    ("curriculum_fractions = 0.4,0.9", "fraction"),
    ("batch_size = 0", "batch_size"),
    ("learning_rate = -1", "learning_rate"),
])
def test_validation_failures(line, frag):
    cfg = parse_config(line + "\n")
    with pytest.raises(ConfigError, match=frag):
        cfg.validate()


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


def test_load_config_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("sigma = 1.0\nlambda = 0.5\nmode = pml\n")
    cfg = load_config(path)
    assert cfg.sigma == 1.0 and cfg.lam == 0.5
