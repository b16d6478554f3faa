import json

import pytest

from edgecall.config import (
    SCHEMA,
    ConfigError,
    ModelConfig,
    baseline_config,
    from_dict,
    load_config,
    loads_config,
    save_config,
    to_dict,
)


def test_defaults_match_table():
    cfg = ModelConfig()
    assert (cfg.c1.filters, cfg.c1.depth, cfg.c1.stride) == (128, 9, 3)
    assert len(cfg.blocks) == 5
    b = cfg.blocks[0]
    assert (b.repeats, b.depth, b.k, b.order) == (5, 21, 3, "pointwise-first")
    assert (b.compression.x, b.compression.y) == (3, 2)
    assert cfg.c2.depth == 11 and cfg.c2.order == "depthwise-first"
    assert (cfg.c3.filters, cfg.c3.depth) == (64, 7)
    assert cfg.chunk_len == 5004 and cfg.n_outputs == 5


def test_empty_file_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    assert load_config(p) == ModelConfig()


def test_round_trip(tmp_path):
    cfg = baseline_config(channels=64)
    p = tmp_path / "c.json"
    save_config(cfg, p)
    assert load_config(p) == cfg
    assert json.loads(p.read_text())["schema"] == SCHEMA


def test_per_block_override():
    cfg = loads_config('{"residual": {"depth": 15}, "blocks": [{"depth": 27}, {}, {}, {}, {}]}')
    assert [b.depth for b in cfg.blocks] == [27, 15, 15, 15, 15]


@pytest.mark.parametrize("text,match", [
    ('{"channels": 256}', "128"),
    ('{"chunk_len": 5000}', "multiple of 9"),
    ('{"c1": {"stride": 2}}', "stride"),
    ('{"residual": {"depth": 20}}', "divide"),
    ('{"residual": {"repeats": 2}}', "repeats"),
    ('{"bogus": 1}', "bogus"),
    ('{"schema": "other/9"}', "schema"),
])
def test_validation_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        loads_config(text)


def test_parse_error_reports_position():
    with pytest.raises(ConfigError, match="line 2"):
        loads_config('{\n  "channels": ,\n}')


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.json")


def test_dict_round_trip_default():
    assert from_dict(to_dict(ModelConfig())) == ModelConfig()
