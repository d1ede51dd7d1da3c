import json

import pytest

from sparsevit.config import SCHEMA, build, format_value, load_config, parse_text
from sparsevit.errors import ConfigError
from sparsevit.sparse import SparseConfig
from sparsevit.vit import SparsePosition, ViTConfig


def test_defaults_are_toy_config():
    cfg = build({})
    assert cfg.vit() == ViTConfig()
    assert cfg.train().batch_size == 64
    assert cfg.train().learning_rate == 0.03
    assert cfg.sparse() == SparseConfig()
    assert cfg["sweep.ratios"] == (0.10, 0.15, 0.20, 0.25, 0.30)


def test_parse_text_handles_comments_and_blanks():
    raw = parse_text("# header\nmodel.depth = 3  # deeper\n\n sparse.enabled=true\n")
    assert raw == {"model.depth": "3", "sparse.enabled": "true"}
    with pytest.raises(ConfigError, match="line 1"):
        parse_text("no equals sign")


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="model.dpeth"):
        build({"model.dpeth": "3"})


def test_bad_values():
    with pytest.raises(ConfigError, match="train.epochs"):
        build({"train.epochs": "many"})
    with pytest.raises(ConfigError) as exc:
        build({"sparse.position": "foo"})
    for p in SparsePosition:
        assert p.value in str(exc.value)
    with pytest.raises(ConfigError):
        build({"model.num_heads": "5"})
    with pytest.raises(ConfigError):
        build({"prune.exclude": "bias,wings"})


def test_resolved_fills_default_lambda():
    cfg = build({"sparse.enabled": "true", "sparse.position": "mlp_gelu_input"}).resolved()
    assert cfg["sparse.lambda"] == 1 / 128
    explicit = build({"sparse.lambda": "0"}).resolved()
    assert explicit["sparse.lambda"] == 0.0


def test_text_round_trip():
    cfg = build({"sparse.blocks": "0,1", "prune.exclude": "norm", "sweep.seeds": "1,2,3",
                 "train.learning_rate": "0.1"}).resolved()
    again = build(cfg.as_text_dict())
    assert again.values == cfg.values
    assert format_value(None) == "none"
    assert format_value(True) == "true"


def test_manifest_is_accepted_as_config(tmp_path):
    cfg = build({"model.depth": "1", "train.seed": "7"})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"command": "train", "config": cfg.as_text_dict()}))
    assert load_config(path).values == cfg.values
    path.write_text(json.dumps({"command": "train"}))
    with pytest.raises(ConfigError):
        load_config(path)


def test_overrides_win(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("train.epochs = 5\n")
    assert load_config(path, {"train.epochs": "2"})["train.epochs"] == 2
    assert set(SCHEMA) >= {"data.source", "sweep.ratios", "prune.ratio"}
