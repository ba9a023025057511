"""Dense tensors with reverse-mode gradients, parameters, AdamW and checkpoints."""

from .checkpoint import FORMAT_VERSION, atomic_write, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check
from .params import AdamWState, ParamStore, adamw_step, make_rng, truncated_normal
from .tensor import (
    MASK_LOGIT,
    Tensor,
    add,
    as_tensor,
    clamp,
    dropout,
    embedding,
    gelu,
    layer_norm,
    linear,
    log,
    masked_mean,
    matmul,
    mean,
    mul,
    reshape,
    scatter_rows,
    sigmoid,
    softmax,
    sub,
    take_rows,
    transpose,
)
from .tensor import sum as tsum

__all__ = [
    "FORMAT_VERSION",
    "MASK_LOGIT",
    "AdamWState",
    "ParamStore",
    "Tensor",
    "adamw_step",
    "add",
    "as_tensor",
    "atomic_write",
    "clamp",
    "dropout",
    "embedding",
    "finite_difference_check",
    "gelu",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "log",
    "make_rng",
    "masked_mean",
    "matmul",
    "mean",
    "mul",
    "reshape",
    "save_checkpoint",
    "scatter_rows",
    "sigmoid",
    "softmax",
    "sub",
    "take_rows",
    "transpose",
    "truncated_normal",
    "tsum",
]
