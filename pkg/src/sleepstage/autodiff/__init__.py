from . import ops
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import grad_check, relative_error
from .optim import AdamHyper, AdamState, ParameterStore, adam_step, step_lr
from .tensor import Tensor, as_tensor, is_grad_enabled, no_grad

__all__ = [
    "AdamHyper",
    "AdamState",
    "CheckpointError",
    "ParameterStore",
    "Tensor",
    "adam_step",
    "as_tensor",
    "grad_check",
    "is_grad_enabled",
    "load_checkpoint",
    "no_grad",
    "ops",
    "relative_error",
    "save_checkpoint",
    "step_lr",
]
