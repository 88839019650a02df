import pytest

from texdiff.config import RunConfig, parse_config, serialize_config
from texdiff.numeric import ConfigError


def test_defaults():
    cfg = RunConfig()
    assert cfg.alpha == 0.3
    assert cfg.texture_size == (12, 12)
    assert cfg.latent_dim == 24
    assert cfg.kernel == 7
    assert cfg.steps == "auto"
    assert cfg.lam == 0.02
    assert cfg.fusion == "add"


def test_parse_round_trip_is_canonical():
    text = 'lambda = 0.05\nalpha = 0.4\nkernel = 5\nfusion = "hadamard"\n'
    cfg = parse_config(text)
    canonical = serialize_config(cfg)
    assert parse_config(canonical) == cfg
    assert serialize_config(parse_config(canonical)) == canonical


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config keys"):
        parse_config("alhpa = 0.3\n")


def test_invalid_toml_rejected():
    with pytest.raises(ConfigError, match="invalid TOML"):
        parse_config("alpha = = 3")


def test_texture_size_scalar_expands():
    cfg = parse_config("texture_size = 16\n")
    assert cfg.texture_size == (16, 16)


def test_steps_accepts_auto_and_int():
    assert parse_config('steps = "auto"\n').steps == "auto"
    assert parse_config("steps = 3\n").steps == 3
    with pytest.raises(ConfigError):
        parse_config('steps = "sometimes"\n')


def test_range_validation():
    with pytest.raises(ConfigError):
        parse_config("alpha = 1.5\n")
    with pytest.raises(ConfigError):
        parse_config("kernel = 4\n")
    with pytest.raises(ConfigError):
        parse_config("lambda = -0.1\n")
    with pytest.raises(ConfigError):
        parse_config('fusion = "max"\n')


def test_paths_round_trip():
    cfg = parse_config('rgb = "a.png"\ndepth = "d.png"\n')
    assert cfg.paths == {"rgb": "a.png", "depth": "d.png"}
    assert 'rgb = "a.png"' in serialize_config(cfg)
