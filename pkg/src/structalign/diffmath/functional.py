"""Vector helpers used by every loss and encoder."""
from typing import Any

import numpy as np

from structalign.diffmath.tensor import (
    Tensor,
    as_tensor,
    log_softmax_op,
    normalize_op,
    reduce_sum,
    softmax_op,
)
from structalign.exceptions import (
    NonPositiveTemperatureError,
    NotADistributionError,
    ShapeMismatchError,
)

# Floor applied to q inside the KL logarithm
KL_PROBABILITY_FLOOR = 1e-12
# Tolerance for a probability vector's sum
DISTRIBUTION_SUM_TOL = 1e-6


def _check_temperature(temperature: float) -> None:
    if not temperature > 0:
        raise NonPositiveTemperatureError(f"temperature must be > 0, got {temperature}")


def l2_normalize(v: Any, axis: int = -1) -> Tensor:
    """Scale v to unit l2 norm along an axis. Raises ZeroVectorError for norms <= 1e-12."""
    return normalize_op(as_tensor(v), axis=axis)


def cosine_sim(a: Any, b: Any, axis: int = -1) -> Tensor:
    """Cosine similarity of two nonzero vectors (or row-wise for stacked vectors)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"cosine_sim operands differ in shape: {a.shape} vs {b.shape}")
    return reduce_sum(l2_normalize(a, axis=axis) * l2_normalize(b, axis=axis), axis=axis)


def softmax(v: Any, temperature: float = 1.0, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax(v / temperature); entries outside ``mask`` are exactly zero."""
    _check_temperature(temperature)
    return softmax_op(as_tensor(v), axis=axis, temperature=temperature, mask=mask)


def log_softmax(v: Any, temperature: float = 1.0, axis: int = -1) -> Tensor:
    _check_temperature(temperature)
    return log_softmax_op(as_tensor(v), axis=axis, temperature=temperature)


def kl_divergence(p: Any, q: Any) -> float:
    """KL(p || q) for two probability vectors.

    Terms with p_i = 0 contribute nothing; q is floored at 1e-12 inside the log.
    """
    p = np.asarray(p.value if isinstance(p, Tensor) else p, dtype=np.float64)
    q = np.asarray(q.value if isinstance(q, Tensor) else q, dtype=np.float64)
    if p.shape != q.shape:
        raise ShapeMismatchError(f"distributions differ in shape: {p.shape} vs {q.shape}")
    for label, dist in (("p", p), ("q", q)):
        total = float(dist.sum())
        if abs(total - 1.0) > DISTRIBUTION_SUM_TOL or np.any(dist < 0):
            raise NotADistributionError(f"{label} is not a probability vector (sum={total:.8f})")
    support = p > 0
    ratio = p[support] / np.maximum(q[support], KL_PROBABILITY_FLOOR)
    return float(np.sum(p[support] * np.log(ratio)))
