import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from usd.config import RunConfig, apply_override, load_config, loosen, parse_config_text, sub_seed
from usd.descent import DescentConfig
from usd.errors import ConfigError
from usd.neural_critic import NeuralConfig

# Listing-style documents: Python comments, a bare call value with no
# trailing comma, and a missing comma before the last entries.
SYNTHETIC = """{
    "n_layers": [64, 1024, 64],     # hidden widths
    "n_points_src": 4000,
    "n_points_target": 4000,
    "T": 800,
    "optimizer": Adam(amsgrad=True)     # reset every outer step
    "batchSize": 512,
    "n_c_startup": 200,
    "n_c": 20,
    "wdecay": 1e-5,
    "lrD": 1e-4,
    "lrQ": 1e-4,
    "tau": 1e-3,
    "alpha": 0.6,
    "lambda_aug_init": 1e-5,
    "rho": 1e-6
}"""

COLOR = """{
    "n_layers": [128, 2048, 128],
    "n_points_src": 65536,
    "n_points_target": 65536,
    "T": 800,
    "optimizer": Adam(amsgrad=True)
    "batchSize": 500,
    "n_c_startup": 300,
    "n_c": 5,
    "wdecay": 1e-5,
    "lrD": 1e-4,
    "lrQ": 1e-4,
    "tau": 1e-6,
    "alpha": 0.3,
    "lambda_aug_init": 0.0,
    "rho": 1e-6
}"""

CELLS = """{
    "n_layers": [128, 1024, 64],
    "n_points_src": 3500,
    "n_points_target": 3500,
    "T": 400,
    "optimizer": Adam(amsgrad=True)
    "batchSize": 100,
    "n_c_startup": 300,
    "n_c": 5,
    "wdecay": 1e-5,
    "lrD": 1e-4,
    "lrQ": 1e-4,
    "tau": 2e-4,
    "alpha": 0.2,
    "lambda_aug_init": 1e-5,
    "rho": 1e-6
    "normalization": nn.BatchNorm1d(track_running_stats=False, momentum=0.0)  # after 2nd layer
}"""


@pytest.mark.parametrize("text,widths,T,tau", [
    (SYNTHETIC, [64, 1024, 64], 800, 1e-3),
    (COLOR, [128, 2048, 128], 800, 1e-6),
    (CELLS, [128, 1024, 64], 400, 2e-4),
])
def test_listings_parse(text, widths, T, tau):
    d = parse_config_text(text)
    assert d["n_layers"] == widths and d["T"] == T and d["tau"] == tau
    assert d["optimizer"] == "Adam(amsgrad=True)"
    cfg = RunConfig.from_dict(d)
    assert cfg.T == T and cfg.rho == 1e-6
    json.loads(loosen(text))


def test_call_value_with_keywords_kept_as_string():
    d = parse_config_text(CELLS)
    assert d["normalization"] == "nn.BatchNorm1d(track_running_stats=False, momentum=0.0)"


def test_python_constants_and_trailing_commas():
    d = parse_config_text('{"a": True, "b": None, "c": False, "s": "True # not a comment",}')
    assert d == {"a": True, "b": None, "c": False, "s": "True # not a comment"}


def test_unparseable_text():
    with pytest.raises(ConfigError):
        parse_config_text("{ this is not a config")


def test_defaults_match_listing():
    cfg = RunConfig()
    listing = parse_config_text(SYNTHETIC)
    for key, value in listing.items():
        assert getattr(cfg, key) == value
    assert cfg.engine == "kernel" and cfg.kernel.n_features == 128 and cfg.eval.n_features == 300


def test_descent_config_by_engine():
    kern = RunConfig().descent_config()
    assert type(kern) is DescentConfig and kern.step_size == 1e-4 and kern.reaction_rate == 1e-3
    neural = RunConfig(engine="neural", n_layers=[8, 8]).descent_config()
    assert isinstance(neural, NeuralConfig) and neural.hidden == (8, 8)
    assert neural.critic_seed == sub_seed(0, 3)


def test_sub_seeds_distinct_and_stable():
    seeds = {sub_seed(7, k) for k in range(4)}
    assert len(seeds) == 4
    assert sub_seed(7, 2) == sub_seed(7, 2)


def test_round_trip_defaults():
    cfg = RunConfig()
    back = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert back == cfg
    assert "lambda" in cfg.to_dict()["kernel"]


configs = st.fixed_dictionaries({
    "engine": st.sampled_from(["kernel", "neural"]),
    "mode": st.sampled_from(["none", "weighted", "birth_death"]),
    "gamma": st.sampled_from([0, 1]),
    "T": st.integers(0, 1000),
    "alpha": st.floats(0.01, 5),
    "lrQ": st.floats(1e-6, 1.0),
    "tau": st.floats(1e-6, 0.1),
    "n_layers": st.lists(st.integers(1, 256), min_size=1, max_size=4),
    "kernel": st.fixed_dictionaries({"n_features": st.integers(1, 512), "lambda": st.floats(1e-6, 1.0)}),
    "seeds": st.fixed_dictionaries({"data": st.integers(0, 2**31), "descent": st.integers(0, 2**31)}),
})


@settings(max_examples=50, deadline=None)
@given(d=configs)
def test_round_trip_property(d):
    cfg = RunConfig.from_dict(d)
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again == cfg
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize("d", [
    {"n_layer": [1]},
    {"kernel": {"lam": 0.1}},
    {"kernel": {"width": 2}},
    {"eval": {"m": 3}},
    {"seeds": {"noise": 1}},
])
def test_unknown_keys_rejected(d):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d)


@pytest.mark.parametrize("d", [
    {"engine": "torch"}, {"mode": "births"}, {"gamma": 2}, {"T": -1}, {"T": 1.5},
    {"n_points_src": 0}, {"batchSize": True}, {"n_layers": []}, {"n_layers": [0]},
    {"alpha": -1}, {"lrQ": 0}, {"lrD": 0}, {"tau": -1e-3}, {"kernel": {"lambda": 0}},
    {"kernel": {"bandwidth": -1}}, {"activation": "gelu"}, {"source": {"kind": "blob"}},
    {"wdecay": -1}, {"rho": float("nan")},
])
def test_invalid_values_rejected(d):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(d)


def test_overrides():
    d = {}
    apply_override(d, "kernel.lambda=0.01")
    apply_override(d, "T=5")
    apply_override(d, "mode=none")
    apply_override(d, "n_layers=[4, 4]")
    assert d == {"kernel": {"lambda": 0.01}, "T": 5, "mode": "none", "n_layers": [4, 4]}
    with pytest.raises(ConfigError):
        apply_override(d, "T")
    with pytest.raises(ConfigError):
        apply_override(d, "T.x=1")


def test_load_config_with_overrides(tmp_path):
    (tmp_path / "c.json").write_text(SYNTHETIC)
    cfg = load_config(tmp_path / "c.json", ["T=3", "seeds.data=9"])
    assert cfg.T == 3 and cfg.seeds.data == 9 and cfg.n_c == 20
    (tmp_path / "list.json").write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "list.json")


def test_shape_sizes_follow_point_counts():
    cfg = RunConfig(n_points_src=10, n_points_target=12)
    assert cfg.source_spec().n == 10 and cfg.target_spec().n == 12
    assert np.allclose(cfg.target_spec().mixture_weights or [0.25] * 4, [0.25] * 4)
