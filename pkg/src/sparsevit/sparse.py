"""Log-penalty sparse regularization on hooked activations.

The training objective is ``E = L + lambda * sum_k log(1 + h_k^2)`` where the
``h_k`` are every element of every tensor captured at one hook position.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import tensor as T
from .errors import ConfigError, ContractError
from .tensor import Tensor
from .vit import HookTap, SparsePosition, ViTConfig


def penalty(h: Tensor) -> Tensor:
    """Sum of ``log(1 + h^2)`` over all elements of ``h``."""
    return T.sum_(T.log1p(T.mul(h, h)))


def default_lambda(n_feature: int) -> float:
    if int(n_feature) != n_feature or n_feature <= 0:
        raise ConfigError(f"n_feature must be a positive integer, got {n_feature!r}")
    return 1.0 / int(n_feature)


def hook_feature_count(position: SparsePosition | str, config: ViTConfig) -> int:
    """Size of the last axis of the tensor captured at ``position``."""
    position = SparsePosition.parse(position)
    if position in (SparsePosition.SIMILARITY_SCORE, SparsePosition.ATTENTION_WEIGHT):
        return config.seq_len
    if position is SparsePosition.WEIGHTED_VALUE:
        return config.head_dim
    if position is SparsePosition.ATTENTION_OUTPUT:
        return config.hidden_size
    return config.mlp_size


@dataclass(frozen=True)
class SparseConfig:
    """Hook position and strength of the sparse penalty.

    ``lam=None`` means "use 1 / n_feature", resolved against a model config by
    :meth:`resolve`. ``n_feature`` overrides the feature count used for that
    default. ``blocks=None`` penalizes every encoder block.
    """

    position: SparsePosition = SparsePosition.ATTENTION_WEIGHT
    lam: float | None = None
    enabled: bool = False
    n_feature: int | None = None
    blocks: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "position", SparsePosition.parse(self.position))
        if self.lam is not None and not self.lam >= 0:
            raise ConfigError(f"sparse.lambda must be >= 0, got {self.lam!r}")
        if self.blocks is not None:
            object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))

    def resolve(self, config: ViTConfig) -> SparseConfig:
        if self.lam is not None:
            return self
        n = self.n_feature or hook_feature_count(self.position, config)
        return replace(self, lam=default_lambda(n))

    def make_tap(self) -> HookTap | None:
        if not self.enabled:
            return None
        return HookTap(self.position, self.blocks)


def penalty_term(taps: HookTap | None, config: SparseConfig) -> Tensor | None:
    """``lambda * sum S(h)`` over all captured tensors, or None when inactive."""
    if not config.enabled:
        return None
    if config.lam is None:
        raise ContractError("sparse lambda is unresolved; call SparseConfig.resolve first")
    if taps is None or not taps.captured:
        raise ContractError(f"sparse penalty enabled at {config.position.value} "
                            "but no tensors were captured")
    if config.lam == 0:
        return None
    total = None
    for value in taps.tensors:
        s = penalty(value)
        total = s if total is None else T.add(total, s)
    return T.scale(total, config.lam)


def penalized(ce: Tensor, taps: HookTap | None,
              config: SparseConfig) -> tuple[Tensor, Tensor | None]:
    """``(E, lambda * sum S)``; the second item is None when the penalty is inactive."""
    term = penalty_term(taps, config)
    return (ce if term is None else T.add(ce, term)), term


def total_loss(ce: Tensor, taps: HookTap | None, config: SparseConfig) -> Tensor:
    """Penalized objective; returns ``ce`` itself when disabled or lambda is 0."""
    return penalized(ce, taps, config)[0]
