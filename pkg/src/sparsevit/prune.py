"""Global L1-unstructured magnitude pruning.

One threshold is chosen over the absolute values of all participating
parameters: the k-th smallest, ``k = int(ratio * N)``. Every element whose
magnitude is not strictly greater than that threshold is set to zero, so ties
at the threshold are all pruned and achieved sparsity may exceed ``ratio``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .tensor import Tensor
from .vit import ParamStore, param_kind

PARAM_GROUPS = ("weight", "bias", "norm", "embedding")


def _validate_exclude(exclude) -> frozenset[str]:
    exclude = frozenset(exclude or ())
    unknown = exclude - set(PARAM_GROUPS)
    if unknown:
        raise ConfigError(f"unknown parameter groups {sorted(unknown)}; "
                          f"valid groups: {', '.join(PARAM_GROUPS)}")
    return exclude


def _participants(params: ParamStore, exclude) -> list[str]:
    exclude = _validate_exclude(exclude)
    return [name for name in params if param_kind(name) not in exclude]


def prune_count(ratio: float, n_total: int) -> int:
    """Number of order statistics to cut, ``int(ratio * n_total)``, after validation."""
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"pruning ratio must lie in (0, 1), got {ratio!r}")
    k = int(ratio * n_total)
    if k < 1:
        raise ConfigError(f"int({ratio} * {n_total}) = 0; ratio too small to prune anything")
    return k


def kth_smallest_abs(values: np.ndarray, ratio: float) -> float:
    """Threshold over a flat array; selection rather than a full sort."""
    k = prune_count(ratio, values.size)
    mags = np.abs(values)
    mags.partition(k - 1)
    return float(mags[k - 1])


def global_threshold(params: ParamStore, ratio: float, exclude=()) -> float:
    names = _participants(params, exclude)
    if not names:
        raise ConfigError("every parameter group is excluded from pruning")
    flat = np.concatenate([params[n].data.reshape(-1) for n in names])
    return kth_smallest_abs(flat, ratio)


@dataclass
class PruneReport:
    ratio: float | None
    threshold: float | None
    n_total: int
    n_zeroed: int
    per_tensor: dict[str, tuple[int, int]] = field(default_factory=dict)  # name -> (numel, zeros)

    @property
    def sparsity(self) -> float:
        return self.n_zeroed / self.n_total if self.n_total else 0.0

    @property
    def n_nonzero(self) -> int:
        return self.n_total - self.n_zeroed

    def record(self) -> dict:
        """Summary line for JSON output."""
        return {"ratio": self.ratio, "threshold": self.threshold, "n_total": self.n_total,
                "n_zeroed": self.n_zeroed, "sparsity": self.sparsity}

    def breakdown(self) -> dict[str, float]:
        return {name: zeros / numel for name, (numel, zeros) in self.per_tensor.items()}


@dataclass
class PruneMask:
    masks: dict[str, np.ndarray]  # True = kept
    threshold: float
    ratio: float

    def apply(self, params: ParamStore) -> ParamStore:
        """Zero masked-out entries; applying the same mask again changes nothing."""
        updates = {}
        for name, keep in self.masks.items():
            value = params[name].data
            if keep.shape != value.shape:
                raise ConfigError(f"mask for {name} has shape {keep.shape}, "
                                  f"parameter has {value.shape}")
            updates[name] = Tensor._wrap(np.where(keep, value, 0.0), requires_grad=True)
        return params.replace(updates)


def sparsity_report(params: ParamStore, ratio: float | None = None,
                    threshold: float | None = None) -> PruneReport:
    """Exact zero counts, per tensor and over the whole store."""
    per_tensor = {}
    for name, t in params.items():
        per_tensor[name] = (t.size, t.size - int(np.count_nonzero(t.data)))
    n_total = sum(n for n, _ in per_tensor.values())
    n_zeroed = sum(z for _, z in per_tensor.values())
    return PruneReport(ratio, threshold, n_total, n_zeroed, per_tensor)


def apply_prune(params: ParamStore, ratio: float,
                exclude=()) -> tuple[ParamStore, PruneMask, PruneReport]:
    """Zero every participating element with ``|value| <= threshold``.

    Kept values are carried over unchanged. ``exclude`` names parameter groups
    (see :data:`PARAM_GROUPS`) that neither count towards the threshold nor
    get pruned.
    """
    threshold = global_threshold(params, ratio, exclude)
    masks = {name: np.abs(params[name].data) > threshold
             for name in _participants(params, exclude)}
    mask = PruneMask(masks, threshold, ratio)
    pruned = mask.apply(params)
    return pruned, mask, sparsity_report(pruned, ratio, threshold)
