"""Flat ``key = value`` run configuration.

Keys are namespaced (``model.*``, ``train.*``, ``sparse.*``, ``prune.*``,
``sweep.*``, ``data.*``); ``#`` starts a comment. Every key has a default, so
an empty file is a valid toy configuration. A run manifest (JSON with a
``config`` object) is accepted wherever a config file is.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .data import DatasetSpec
from .errors import ConfigError
from .prune import PARAM_GROUPS
from .sparse import SparseConfig
from .train import DEFAULT_SWEEP_RATIOS, TrainConfig
from .vit import SparsePosition, ViTConfig


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(parse: Callable) -> Callable:
    def parse_optional(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else parse(text)
    return parse_optional


def _list(parse: Callable) -> Callable:
    def parse_list(text: str):
        return tuple(parse(item) for item in text.split(",") if item.strip())
    return parse_list


def _position(text: str) -> str:
    return SparsePosition.parse(text).value


def _blocks(text: str):
    return None if text.strip().lower() in ("", "all", "none") else _list(int)(text)


def _groups(text: str):
    groups = _list(lambda s: s.strip())(text)
    bad = [g for g in groups if g not in PARAM_GROUPS]
    if bad:
        raise ValueError(f"unknown groups {bad}; valid: {', '.join(PARAM_GROUPS)}")
    return groups


def _source(text: str) -> str:
    text = text.strip()
    if text not in ("synthetic", "cifar_binary"):
        raise ValueError("valid sources: synthetic, cifar_binary")
    return text


_str = str.strip

# key -> (parser, default)
SCHEMA: dict[str, tuple[Callable[[str], Any], Any]] = {
    "model.image_size": (int, 32),
    "model.patch_size": (int, 8),
    "model.channels": (int, 3),
    "model.hidden_size": (int, 64),
    "model.mlp_size": (int, 128),
    "model.num_heads": (int, 4),
    "model.depth": (int, 2),
    "model.num_classes": (int, 10),
    "model.layer_norm_eps": (float, 1e-6),
    "train.batch_size": (int, 64),
    "train.learning_rate": (float, 0.03),
    "train.epochs": (int, 20),
    "train.weight_decay": (float, 1e-4),
    "train.momentum": (float, 0.0),
    "train.seed": (int, 0),
    "train.record_time": (_bool, False),
    "sparse.enabled": (_bool, False),
    "sparse.position": (_position, SparsePosition.ATTENTION_WEIGHT.value),
    "sparse.lambda": (_optional(float), None),
    "sparse.n_feature": (_optional(int), None),
    "sparse.blocks": (_blocks, None),
    "prune.ratio": (_optional(float), None),
    "prune.exclude": (_groups, ()),
    "sweep.ratios": (_list(float), DEFAULT_SWEEP_RATIOS),
    "sweep.seeds": (_list(int), ()),
    "data.source": (_source, "synthetic"),
    "data.path": (_optional(_str), None),
    "data.train_size": (_optional(int), 320),
    "data.test_size": (_optional(int), 200),
    "data.noise": (float, 0.05),
    "data.seed": (int, 0),
}


def format_value(value) -> str:
    """Canonical text form; parsing it back gives the same value."""
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(format_value(v) for v in value) if value else ""
    return str(value)


def parse_text(text: str) -> dict[str, str]:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        raw[key] = value
    return raw


def read_raw(path) -> dict[str, str]:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        try:
            manifest = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(manifest.get("config"), dict):
            raise ConfigError(f"{path}: JSON config must contain a 'config' object")
        return {k: str(v) for k, v in manifest["config"].items()}
    return parse_text(text)


@dataclass
class RunConfig:
    values: dict[str, Any]

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, prefix: str) -> dict[str, Any]:
        return {k.split(".", 1)[1]: v for k, v in self.values.items()
                if k.startswith(prefix + ".")}

    def vit(self) -> ViTConfig:
        return ViTConfig(**self.section("model"))

    def sparse(self) -> SparseConfig:
        s = self.section("sparse")
        return SparseConfig(position=s["position"], lam=s["lambda"], enabled=s["enabled"],
                            n_feature=s["n_feature"], blocks=s["blocks"])

    def train(self) -> TrainConfig:
        t = self.section("train")
        return TrainConfig(batch_size=t["batch_size"], learning_rate=t["learning_rate"],
                           epochs=t["epochs"], weight_decay=t["weight_decay"],
                           momentum=t["momentum"], seed=t["seed"], sparse=self.sparse())

    def dataset(self) -> DatasetSpec:
        d = self.section("data")
        m = self.section("model")
        return DatasetSpec(source=d["source"], path=d["path"], num_classes=m["num_classes"],
                           image_size=m["image_size"], channels=m["channels"],
                           train_size=d["train_size"], test_size=d["test_size"],
                           noise=d["noise"], seed=d["seed"])

    def resolved(self) -> RunConfig:
        """Copy with ``sparse.lambda`` filled in from its default when unset."""
        values = dict(self.values)
        if values["sparse.lambda"] is None:
            values["sparse.lambda"] = self.sparse().resolve(self.vit()).lam
        return RunConfig(values)

    def as_text_dict(self) -> dict[str, str]:
        return {k: format_value(v) for k, v in self.values.items()}

    def validate(self) -> RunConfig:
        """Build every typed config once so range errors surface early."""
        self.vit()
        self.train()
        self.dataset()
        return self


def build(raw: dict[str, str], overrides: dict[str, str] | None = None) -> RunConfig:
    merged = dict(raw)
    merged.update(overrides or {})
    values = {key: default for key, (_, default) in SCHEMA.items()}
    for key, text in merged.items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parse = SCHEMA[key][0]
        try:
            values[key] = parse(text)
        except ConfigError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
    return RunConfig(values).validate()


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    return build(read_raw(path) if path else {}, overrides)
