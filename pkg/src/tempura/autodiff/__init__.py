from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_diff_check
from .nn import FFN, LayerNorm, Linear, Module
from .optim import AdamW
from .tensor import (
    ContractError,
    NumericError,
    ShapeError,
    Tensor,
    backward,
    is_grad_enabled,
    no_grad,
)

__all__ = [
    "AdamW", "CheckpointError", "ContractError", "FFN", "LayerNorm", "Linear", "Module",
    "NumericError", "ShapeError", "Tensor", "backward", "finite_diff_check", "is_grad_enabled",
    "load_checkpoint", "no_grad", "ops", "save_checkpoint",
]
