from __future__ import annotations

import pytest

from bsqz.config import (
    CompressorConfig,
    ExperimentConfig,
    apply_overrides,
    config_hash,
    dump_config,
    flatten_config,
    load_config,
    parse_assignment,
    parse_flat,
    save_config,
)
from bsqz.errors import ConfigError


def test_parse_flat_builds_nested_tree() -> None:
    text = "# comment\nmodel = m.pomdp\n\nsampler.m = 10  # trailing\ncompressor.variant = vdc\n"
    assert parse_flat(text) == {"model": "m.pomdp", "sampler": {"m": "10"}, "compressor": {"variant": "vdc"}}


def test_parse_assignment_errors() -> None:
    assert parse_assignment(" a.b =  c = d ") == ("a.b", "c = d")
    with pytest.raises(ConfigError, match="line 3"):
        parse_assignment("no equals here", 3)
    with pytest.raises(ConfigError):
        parse_assignment(" = 1")
    with pytest.raises(ConfigError):
        parse_flat("a = 1\na.b = 2\n")


def test_load_config_validates(tmp_path) -> None:
    path = tmp_path / "x.conf"
    path.write_text("model = m.pomdp\nsolver.baseline = true\ncompressor.lam = 0.5\n")
    cfg = load_config(str(path))
    assert cfg.solver.baseline is True
    assert cfg.compressor.lam == 0.5
    assert cfg.sampler.m == 2000

    path.write_text("model = m.pomdp\nsolver.nope = 1\n")
    with pytest.raises(ConfigError):
        load_config(str(path))
    with pytest.raises(ConfigError, match="not found"):
        load_config(str(tmp_path / "missing.conf"))


def test_dump_is_sorted_and_reloadable(tmp_path) -> None:
    cfg = ExperimentConfig(model="m.pomdp", compressor=CompressorConfig(variant="onmf", k=3))
    text = dump_config(cfg)
    keys = [line.split(" = ")[0] for line in text.splitlines()]
    assert keys == sorted(keys)
    assert "solver.value_floor_init = true" in text
    path = save_config(cfg, str(tmp_path / "saved.conf"))
    assert load_config(path) == cfg


def test_overrides_change_the_hash() -> None:
    cfg = ExperimentConfig(model="m.pomdp")
    same = apply_overrides(cfg, [])
    assert config_hash(same) == config_hash(cfg)
    other = apply_overrides(cfg, ["sampler.seed=4", "compressor.k = 2"])
    assert other.sampler.seed == 4 and other.compressor.k == 2
    assert config_hash(other) != config_hash(cfg)
    with pytest.raises(ConfigError):
        apply_overrides(cfg, ["eval.horizon=0"])


def test_compressor_views() -> None:
    c = CompressorConfig(variant="vdc", mode="lossy-greedy", k=4, sweep="1, 2,4")
    assert c.vdc().k == 4
    assert c.sweep_values() == [1.0, 2.0, 4.0]
    assert CompressorConfig(sweep="").sweep_values() == []
    with pytest.raises(ConfigError):
        CompressorConfig(sweep="1,x").sweep_values()
    with pytest.raises(ConfigError, match="compressor.k"):
        CompressorConfig(variant="pnmf").nmf()
    nmf = CompressorConfig(variant="lpnmf", k=2, mu=0.3).nmf()
    assert nmf.variant == "lpnmf" and nmf.mu == 0.3


def test_flatten_config_matches_dump() -> None:
    cfg = ExperimentConfig(model="m.pomdp", threads=2)
    flat = flatten_config(cfg)
    assert flat["threads"] == "2"
    assert flat["compressor.lam"] == "auto"
    assert "out" not in flat
