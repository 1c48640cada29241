import json

import pytest

from ssrcnn.config import ConfigError, RunConfig


def test_defaults():
    c = RunConfig()
    assert (c.queries, c.heads, c.mu, c.tau, c.k_at) == (300, 6, 4.0, 0.3, (20, 50, 100))
    assert c.use_graph_constraint
    assert not RunConfig(profile="oi").use_graph_constraint
    assert RunConfig(profile="oi", graph_constraint=True).use_graph_constraint


def test_round_trip_through_dict():
    c = RunConfig(seed=3, k_at=(5, 10), tau=0.5)
    assert RunConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


@pytest.mark.parametrize("raw", [{"bogus": 1}, {"profile": "coco"}, {"mu": 0}, {"queries": 0},
                                 {"coeffs": {"nope": 1.0}}, {"assign_mode": "x"},
                                 {"toy": {"positions": "fixed"}}])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(raw)


def test_load_json_and_yaml(tmp_path):
    pytest.importorskip("yaml")
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"seed": 4, "focal": {"adaptive": True}}))
    y = tmp_path / "c.yaml"
    y.write_text("seed: 4\nfocal:\n  adaptive: true\n")
    assert RunConfig.load(j) == RunConfig.load(y)
    assert RunConfig.load(y).focal.adaptive


def test_override_ignores_none():
    c = RunConfig().override(seed=9, tau=None)
    assert c.seed == 9 and c.tau == 0.3
