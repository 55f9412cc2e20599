from .tensor import (
    DegenerateBatchError,
    DimensionError,
    Tensor,
    add,
    concat,
    cross_entropy,
    dropout,
    embedding,
    l2_normalize,
    layer_norm,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    sigmoid_cross_entropy,
    softmax,
    sqrt,
    sum_,
    tanh,
    transpose,
    uniform_init,
)
from .modules import Embedding, Linear, Module, ModuleList
from .optim import Adam, AdamState, OptimizationError, adam_step
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_error, model_finite_difference_error

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "DegenerateBatchError",
    "DimensionError",
    "Embedding",
    "Linear",
    "Module",
    "ModuleList",
    "OptimizationError",
    "Tensor",
    "adam_step",
    "add",
    "concat",
    "cross_entropy",
    "dropout",
    "embedding",
    "finite_difference_error",
    "l2_normalize",
    "layer_norm",
    "load_checkpoint",
    "matmul",
    "mean",
    "model_finite_difference_error",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "save_checkpoint",
    "sigmoid",
    "sigmoid_cross_entropy",
    "softmax",
    "sqrt",
    "sum_",
    "tanh",
    "transpose",
    "uniform_init",
]
