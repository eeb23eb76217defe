from .checkpoint import FORMAT_TAG, CheckpointError, load_into, read_checkpoint, save_checkpoint
from .gradcheck import analytic_grads, grad_check, grad_check_report
from .layers import (
    AttentionParams,
    DimensionError,
    LinearParams,
    NormParams,
    attention_forward,
    copy_params,
    grads_of,
    init_attention,
    init_linear,
    linear_forward,
    mlp_forward,
    named_leaves,
    softmax_row,
    to_tensors,
    tree_map,
)
from .tensor import Tensor, backward

__all__ = [
    "FORMAT_TAG",
    "AttentionParams",
    "CheckpointError",
    "DimensionError",
    "LinearParams",
    "NormParams",
    "Tensor",
    "analytic_grads",
    "attention_forward",
    "backward",
    "copy_params",
    "grad_check",
    "grad_check_report",
    "grads_of",
    "init_attention",
    "init_linear",
    "linear_forward",
    "load_into",
    "mlp_forward",
    "named_leaves",
    "read_checkpoint",
    "save_checkpoint",
    "softmax_row",
    "to_tensors",
    "tree_map",
]
