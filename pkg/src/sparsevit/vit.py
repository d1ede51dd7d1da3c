"""Vision Transformer built on :mod:`sparsevit.tensor`.

Pre-norm encoder blocks, multi-head self-attention with an output projection,
and a GELU MLP. Intermediate tensors at the five sparse-hook positions are
offered to a :class:`HookTap` during the forward pass.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass
from typing import Iterator, Mapping

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor


@dataclass(frozen=True)
class ViTConfig:
    image_size: int = 32
    patch_size: int = 8
    channels: int = 3
    hidden_size: int = 64
    mlp_size: int = 128
    num_heads: int = 4
    depth: int = 2
    num_classes: int = 10
    layer_norm_eps: float = 1e-6

    def __post_init__(self):
        counts = ("image_size", "patch_size", "channels", "hidden_size", "mlp_size",
                  "num_heads", "depth", "num_classes")
        for name in counts:
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"model.{name} must be a positive integer, got {value!r}")
        if self.image_size % self.patch_size:
            raise ConfigError(
                f"model.image_size {self.image_size} is not divisible by "
                f"model.patch_size {self.patch_size}")
        if self.hidden_size % self.num_heads:
            raise ConfigError(
                f"model.hidden_size {self.hidden_size} is not divisible by "
                f"model.num_heads {self.num_heads}")
        if not self.layer_norm_eps > 0:
            raise ConfigError("model.layer_norm_eps must be positive")

    @classmethod
    def vit_b16(cls, num_classes: int = 10, image_size: int = 384) -> ViTConfig:
        """ViT-B/16 as used for fine-tuning at 384 px."""
        return cls(image_size=image_size, patch_size=16, channels=3, hidden_size=768,
                   mlp_size=3072, num_heads=12, depth=12, num_classes=num_classes)

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)


class SparsePosition(str, enum.Enum):
    """Where inside a transformer block the sparse penalty reads its input."""

    SIMILARITY_SCORE = "similarity_score"  # QK^t / sqrt(d_k), before softmax
    ATTENTION_WEIGHT = "attention_weight"  # after softmax
    WEIGHTED_VALUE = "weighted_value"      # attention weight times V, per head
    ATTENTION_OUTPUT = "attention_output"  # after the output projection
    MLP_GELU_INPUT = "mlp_gelu_input"      # first MLP linear, before GELU

    @classmethod
    def parse(cls, value) -> SparsePosition:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            valid = ", ".join(p.value for p in cls)
            raise ConfigError(
                f"unknown sparse.position {value!r}; valid positions: {valid}") from None


class HookTap:
    """Collects the tensors of one hook position during a single forward pass.

    ``position=None`` records nothing. ``blocks`` restricts capture to a subset
    of encoder blocks (all blocks by default).
    """

    def __init__(self, position: SparsePosition | str | None = None, blocks=None):
        self.position = None if position is None else SparsePosition.parse(position)
        self.blocks = None if blocks is None else frozenset(int(b) for b in blocks)
        self.captured: list[tuple[int, Tensor]] = []

    def wants(self, position: SparsePosition, block: int) -> bool:
        return (self.position is position
                and (self.blocks is None or block in self.blocks))

    def record(self, position: SparsePosition, block: int, value: Tensor) -> None:
        if self.wants(position, block):
            self.captured.append((block, value))

    def clear(self) -> None:
        self.captured = []

    @property
    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.captured]

    def __len__(self) -> int:
        return len(self.captured)


def _record(taps: HookTap | None, position: SparsePosition, block: int, value: Tensor):
    if taps is not None:
        taps.record(position, block, value)


class ParamStore:
    """Ordered, name-keyed collection of trainable tensors.

    Tensors are immutable, so updates build a new store.
    """

    def __init__(self, items: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, value in (items or {}).items():
            if name in self._params:
                raise ContractError(f"duplicate parameter name {name!r}")
            if not value.requires_grad:
                value = Tensor._wrap(value.data, requires_grad=True)
            self._params[name] = value

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def values(self):
        return self._params.values()

    def numel(self) -> int:
        return sum(t.size for t in self._params.values())

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: t.shape for name, t in self._params.items()}

    def replace(self, updates: Mapping[str, Tensor]) -> ParamStore:
        unknown = set(updates) - set(self._params)
        if unknown:
            raise ContractError(f"unknown parameter names: {sorted(unknown)}")
        return ParamStore({name: updates.get(name, t) for name, t in self._params.items()})

    def clone(self) -> ParamStore:
        return ParamStore({name: Tensor(t.data, requires_grad=True)
                           for name, t in self._params.items()})

    def grads_by_name(self, grads: Mapping[Tensor, Tensor]) -> dict[str, Tensor]:
        """Re-key a ``backward`` result by parameter name."""
        out = {}
        for name, t in self._params.items():
            if t not in grads:
                raise ContractError(f"no gradient for parameter {name!r}")
            out[name] = grads[t]
        return out

    def bitwise_equal(self, other: ParamStore) -> bool:
        if self.names() != other.names():
            return False
        return all(np.array_equal(a.data, other[n].data) and a.shape == other[n].shape
                   for n, a in self.items())


def param_shapes(config: ViTConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Names and shapes of every parameter, in canonical store order."""
    d, m = config.hidden_size, config.mlp_size
    shapes = [
        ("patch_embed.weight", (config.patch_dim, d)),
        ("patch_embed.bias", (d,)),
        ("cls_token", (1, d)),
        ("pos_embed", (config.seq_len, d)),
    ]
    for i in range(config.depth):
        p = f"blocks.{i}."
        shapes += [
            (p + "norm1.gamma", (d,)), (p + "norm1.beta", (d,)),
            (p + "attn.wq", (d, d)), (p + "attn.bq", (d,)),
            (p + "attn.wk", (d, d)), (p + "attn.bk", (d,)),
            (p + "attn.wv", (d, d)), (p + "attn.bv", (d,)),
            (p + "attn.wo", (d, d)), (p + "attn.bo", (d,)),
            (p + "norm2.gamma", (d,)), (p + "norm2.beta", (d,)),
            (p + "mlp.w1", (d, m)), (p + "mlp.b1", (m,)),
            (p + "mlp.w2", (m, d)), (p + "mlp.b2", (d,)),
        ]
    shapes += [
        ("norm.gamma", (d,)), ("norm.beta", (d,)),
        ("head.weight", (d, config.num_classes)), ("head.bias", (config.num_classes,)),
    ]
    return shapes


def param_kind(name: str) -> str:
    """Coarse group of a parameter: weight, bias, norm or embedding."""
    leaf = name.rsplit(".", 1)[-1]
    if name in ("cls_token", "pos_embed"):
        return "embedding"
    if leaf in ("gamma", "beta"):
        return "norm"
    if leaf == "bias" or (leaf.startswith("b") and leaf[1:] in ("q", "k", "v", "o", "1", "2")):
        return "bias"
    return "weight"


def count_params(config: ViTConfig) -> int:
    return sum(math.prod(shape) for _, shape in param_shapes(config))


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02,
                 bound: float = 2.0) -> np.ndarray:
    """Normal(0, std) samples redrawn until they fall within +-bound*std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    out *= std
    return out


def init_params(config: ViTConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config):
        kind = param_kind(name)
        if kind == "weight" or name == "pos_embed":
            value = trunc_normal(rng, shape)
        elif name.endswith("gamma"):
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params[name] = Tensor._wrap(value, requires_grad=True)
    return ParamStore(params)


def check_params(params: ParamStore, config: ViTConfig) -> None:
    """Raise ConfigError unless ``params`` has exactly the layout ``config`` implies."""
    expected = param_shapes(config)
    got = params.shapes()
    if [n for n, _ in expected] != list(got):
        missing = sorted({n for n, _ in expected} - set(got))
        extra = sorted(set(got) - {n for n, _ in expected})
        raise ConfigError(f"parameter names do not match config (missing={missing[:5]}, "
                          f"unexpected={extra[:5]})")
    for name, shape in expected:
        if got[name] != shape:
            raise ConfigError(f"parameter {name} has shape {got[name]}, config implies {shape}")


# -- forward pass ------------------------------------------------------------


def patchify(image, config: ViTConfig) -> Tensor:
    """Split ``[..., H, W, C]`` images into ``[..., N, P*P*C]`` flattened patches.

    Patches are ordered row-major over the patch grid; each patch is flattened
    row-major over (row, column, channel).
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    h = w = config.image_size
    p, c = config.patch_size, config.channels
    if x.ndim < 3 or x.shape[-3:] != (h, w, c):
        raise ConfigError(f"image shape {x.shape} does not end in ({h}, {w}, {c})")
    lead = x.shape[:-3]
    g = config.grid
    x = T.reshape(x, lead + (g, p, g, p, c))
    n = len(lead)
    perm = tuple(range(n)) + tuple(n + ax for ax in (0, 2, 1, 3, 4))
    x = T.transpose(x, perm)
    return T.reshape(x, lead + (config.num_patches, config.patch_dim))


def embed(patches: Tensor, params: ParamStore, config: ViTConfig) -> Tensor:
    """Project patches to the hidden size, prepend the class token, add positions."""
    if patches.ndim < 2 or patches.shape[-2:] != (config.num_patches, config.patch_dim):
        raise ConfigError(
            f"patches of shape {patches.shape} do not match "
            f"({config.num_patches}, {config.patch_dim})")
    x = T.add_bias(patches @ params["patch_embed.weight"], params["patch_embed.bias"])
    lead = patches.shape[:-2]
    cls = T.broadcast_to(params["cls_token"], lead + (1, config.hidden_size))
    x = T.concat([cls, x], axis=-2)
    return x + params["pos_embed"]


def attention_head(q: Tensor, k: Tensor, v: Tensor, taps: HookTap | None = None,
                   block: int = 0) -> Tensor:
    """Scaled dot-product attention ``softmax(QK^t / sqrt(d_k)) V`` over the last two axes."""
    if q.shape != k.shape or q.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"attention shapes disagree: Q {q.shape}, K {k.shape}, V {v.shape}")
    d_k = q.shape[-1]
    scores = T.scale(q @ T.transpose(k), 1.0 / math.sqrt(d_k))
    _record(taps, SparsePosition.SIMILARITY_SCORE, block, scores)
    weights = T.softmax_rows(scores)
    _record(taps, SparsePosition.ATTENTION_WEIGHT, block, weights)
    out = weights @ v
    _record(taps, SparsePosition.WEIGHTED_VALUE, block, out)
    return out


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # [..., T, D] -> [..., heads, T, D/heads]
    lead, (t, d) = x.shape[:-2], x.shape[-2:]
    x = T.reshape(x, lead + (t, heads, d // heads))
    n = len(lead)
    return T.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))


def _merge_heads(x: Tensor) -> Tensor:
    # [..., heads, T, d_k] -> [..., T, heads*d_k]; heads concatenated in order
    lead, (h, t, dk) = x.shape[:-3], x.shape[-3:]
    n = len(lead)
    x = T.transpose(x, tuple(range(n)) + (n + 1, n, n + 2))
    return T.reshape(x, lead + (t, h * dk))


def multi_head_attention(x: Tensor, params: ParamStore, config: ViTConfig, block: int = 0,
                         taps: HookTap | None = None) -> Tensor:
    if x.shape[-1] % config.num_heads:
        raise ConfigError(f"feature size {x.shape[-1]} not divisible by {config.num_heads} heads")
    p = f"blocks.{block}.attn."
    q = _split_heads(T.add_bias(x @ params[p + "wq"], params[p + "bq"]), config.num_heads)
    k = _split_heads(T.add_bias(x @ params[p + "wk"], params[p + "bk"]), config.num_heads)
    v = _split_heads(T.add_bias(x @ params[p + "wv"], params[p + "bv"]), config.num_heads)
    heads = attention_head(q, k, v, taps, block)
    out = T.add_bias(_merge_heads(heads) @ params[p + "wo"], params[p + "bo"])
    _record(taps, SparsePosition.ATTENTION_OUTPUT, block, out)
    return out


def mlp(x: Tensor, params: ParamStore, block: int = 0, taps: HookTap | None = None) -> Tensor:
    p = f"blocks.{block}.mlp."
    pre = T.add_bias(x @ params[p + "w1"], params[p + "b1"])
    _record(taps, SparsePosition.MLP_GELU_INPUT, block, pre)
    return T.add_bias(T.gelu(pre) @ params[p + "w2"], params[p + "b2"])


def encoder_block(x: Tensor, params: ParamStore, config: ViTConfig, block: int = 0,
                  taps: HookTap | None = None) -> Tensor:
    p = f"blocks.{block}."
    eps = config.layer_norm_eps
    h = T.layer_norm(x, params[p + "norm1.gamma"], params[p + "norm1.beta"], eps)
    x = x + multi_head_attention(h, params, config, block, taps)
    h = T.layer_norm(x, params[p + "norm2.gamma"], params[p + "norm2.beta"], eps)
    return x + mlp(h, params, block, taps)


def forward(images, params: ParamStore, config: ViTConfig,
            taps: HookTap | None = None) -> Tensor:
    """Logits ``[B, num_classes]`` for a batch of ``[B, H, W, C]`` images."""
    x = images if isinstance(images, Tensor) else Tensor(images)
    if x.ndim != 4:
        raise ConfigError(f"expected a [B, H, W, C] batch, got shape {x.shape}")
    if taps is not None:
        taps.clear()
    h = embed(patchify(x, config), params, config)
    for i in range(config.depth):
        h = encoder_block(h, params, config, i, taps)
    cls = h[:, 0, :]
    cls = T.layer_norm(cls, params["norm.gamma"], params["norm.beta"], config.layer_norm_eps)
    return T.add_bias(cls @ params["head.weight"], params["head.bias"])
