"""Dense arithmetic with reverse-mode gradients and a finite-difference oracle."""
from structalign.diffmath.functional import (
    KL_PROBABILITY_FLOOR,
    cosine_sim,
    kl_divergence,
    l2_normalize,
    log_softmax,
    softmax,
)
from structalign.diffmath.gradcheck import analytic_gradient, grad_check, numerical_gradient
from structalign.diffmath.tensor import (
    GradientTape,
    Tensor,
    active_tape,
    as_tensor,
    backward,
    concatenate,
    exp,
    log,
    log_softmax_values,
    matmul,
    reduce_max,
    reduce_mean,
    reduce_sum,
    reshape,
    softmax_values,
    sqrt,
    stack,
    swapaxes,
    tanh,
)

__all__ = [
    "KL_PROBABILITY_FLOOR",
    "GradientTape",
    "Tensor",
    "active_tape",
    "analytic_gradient",
    "as_tensor",
    "backward",
    "concatenate",
    "cosine_sim",
    "exp",
    "grad_check",
    "kl_divergence",
    "l2_normalize",
    "log",
    "log_softmax",
    "log_softmax_values",
    "matmul",
    "numerical_gradient",
    "reduce_max",
    "reduce_mean",
    "reduce_sum",
    "reshape",
    "softmax",
    "softmax_values",
    "sqrt",
    "stack",
    "swapaxes",
    "tanh",
]
