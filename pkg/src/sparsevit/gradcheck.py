"""Finite-difference verification of the penalized loss at each hook position."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .sparse import SparseConfig, total_loss
from .tensor import Tensor
from .vit import ParamStore, SparsePosition, ViTConfig, forward, init_params

# Denominator floor for relative errors. Central differences at step 1e-6 carry
# absolute round-off of order eps * |loss| / step, about 1e-9 here, so entries
# far below this floor cannot be compared relatively.
REL_ERR_FLOOR = 1e-3


def relative_error(analytic, numeric, floor: float = REL_ERR_FLOOR) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def jitter(params: ParamStore, rng: np.random.Generator, scale: float = 0.05) -> ParamStore:
    """Perturb every entry so biases, norms and the class token are not at their init values."""
    return ParamStore({name: Tensor(t.data + scale * rng.standard_normal(t.shape),
                                    requires_grad=True)
                       for name, t in params.items()})


@dataclass
class PositionCheck:
    position: SparsePosition
    max_rel_err: float
    worst_param: str
    n_checked: int


def loss_fn(images, labels, config: ViTConfig, sparse: SparseConfig):
    def f(params: ParamStore) -> Tensor:
        taps = sparse.make_tap()
        ce = T.cross_entropy(forward(images, params, config, taps), labels)
        return total_loss(ce, taps, sparse)
    return f


def check_params(f, params: ParamStore, rng: np.random.Generator, samples: int,
                 step: float) -> tuple[float, str, int]:
    """Worst relative error over ``samples`` random coordinates of every parameter."""
    grads = params.grads_by_name(T.backward(f(params)))
    worst, worst_name, checked = 0.0, "", 0
    for name, p in params.items():
        idx = rng.choice(p.size, size=min(samples, p.size), replace=False)

        def g(value: Tensor, name=name) -> Tensor:
            return f(params.replace({name: value}))

        numeric = T.finite_diff_entries(g, p, idx, step)
        analytic = grads[name].data.reshape(-1)[idx]
        err = float(relative_error(analytic, numeric).max())
        checked += len(idx)
        if err > worst:
            worst, worst_name = err, name
    return worst, worst_name, checked


def check_position(position: SparsePosition | str, config: ViTConfig | None = None,
                   seed: int = 0, step: float = 1e-6, samples: int = 4,
                   batch: int = 2, lam: float | None = None) -> PositionCheck:
    config = config or ViTConfig()
    rng = np.random.default_rng(seed)
    params = jitter(init_params(config, seed), rng)
    images = rng.uniform(0.0, 1.0, size=(batch, config.image_size, config.image_size,
                                         config.channels))
    labels = rng.integers(0, config.num_classes, size=batch)
    sparse = SparseConfig(position=position, lam=lam, enabled=True).resolve(config)
    f = loss_fn(images, labels, config, sparse)
    worst, name, n = check_params(f, params, rng, samples, step)
    return PositionCheck(sparse.position, worst, name, n)


def check_all(config: ViTConfig | None = None, seed: int = 0, step: float = 1e-6,
              samples: int = 4, batch: int = 2) -> list[PositionCheck]:
    return [check_position(p, config, seed, step, samples, batch) for p in SparsePosition]
