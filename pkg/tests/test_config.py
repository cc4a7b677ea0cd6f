import numpy as np
import pytest

from rationale_cf.config import ABLATIONS, GRIDS, TrainConfig, format_config, parse_config_file, substream
from rationale_cf.exceptions import ConfigError


def test_defaults_are_valid_and_round_trip(tmp_path):
    cfg = TrainConfig()
    path = tmp_path / "c.cfg"
    path.write_text(format_config(cfg.to_dict()))
    assert TrainConfig.from_mapping(parse_config_file(path)) == cfg


def test_config_file_comments_and_errors(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# header\ndim = 16  # width\n\nheads=2\n")
    assert parse_config_file(p) == {"dim": "16", "heads": "2"}
    p.write_text("dim 16\n")
    with pytest.raises(ConfigError):
        parse_config_file(p)


def test_unknown_and_malformed_keys_rejected():
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"dimension": "4"})
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"dim": "four"})
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"resample_anchors": "maybe"})
    assert TrainConfig.from_mapping({"resample_anchors": "yes"}).resample_anchors is True


@pytest.mark.parametrize("changes", [
    {"dim": 30, "heads": 4},
    {"rho_c": 0.95},
    {"rho_r": 0.0},
    {"ablation": "bogus"},
    {"tau": 0.0},
    {"lambda2": -1.0},
    {"rec_mode": "partial"},
    {"batch_size": 0},
])
def test_invalid_configs(changes):
    with pytest.raises(ConfigError):
        TrainConfig(**changes)


def test_ablation_switches():
    assert set(ABLATIONS) == {"none", "no_te", "random_mask", "mlp_mask", "no_rd"}
    assert TrainConfig(ablation="no_rd").effective_lambda1 == 0.0
    assert TrainConfig(lambda1=2.0).effective_lambda1 == 2.0
    assert not TrainConfig(ablation="no_te").use_topology


def test_substreams_are_independent_and_reproducible():
    a = substream(3, "sampler", 1).random(5)
    assert np.array_equal(a, substream(3, "sampler", 1).random(5))
    assert not np.array_equal(a, substream(3, "sampler", 2).random(5))
    assert not np.array_equal(a, substream(3, "negatives", 1).random(5))
    assert not np.array_equal(a, substream(4, "sampler", 1).random(5))


def test_grids_contain_defaults():
    cfg = TrainConfig()
    for name, grid in GRIDS.items():
        assert getattr(cfg, name) in grid
        TrainConfig(**{name: grid[0]})
