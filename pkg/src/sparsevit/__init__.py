"""Vision transformer with sparse activation regularization and global magnitude pruning.

Everything runs on numpy through a small reverse-mode autodiff engine
(:mod:`sparsevit.tensor`).
"""

from .errors import ConfigError, ContractError, DimensionError, FormatError
from .prune import apply_prune, global_threshold
from .sparse import SparseConfig, penalty
from .tensor import Tensor, backward, no_grad
from .train import TrainConfig, evaluate, train
from .vit import ParamStore, SparsePosition, ViTConfig, forward, init_params

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DimensionError", "FormatError",
    "ParamStore", "SparseConfig", "SparsePosition", "Tensor", "TrainConfig", "ViTConfig",
    "apply_prune", "backward", "evaluate", "forward", "global_threshold", "init_params",
    "no_grad", "penalty", "train",
]
