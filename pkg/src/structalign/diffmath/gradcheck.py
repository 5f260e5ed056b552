"""Central finite-difference oracle for analytic gradients."""
import logging
from typing import Callable, Mapping

import numpy as np

from structalign.diffmath.tensor import GradientTape, Tensor, backward
from structalign.exceptions import NonFiniteFunctionValueError

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-4
MIN_STEP = 1e-6
MAX_STEP = 1e-3
# Denominator floor of the relative error
RELATIVE_FLOOR = 1e-8


def _evaluate(f: Callable[[dict[str, Tensor]], Tensor], values: Mapping[str, np.ndarray]) -> float:
    out = f({name: Tensor(v) for name, v in values.items()}).item()
    if not np.isfinite(out):
        raise NonFiniteFunctionValueError(f"function value is not finite: {out}")
    return out


def numerical_gradient(
    f: Callable[[dict[str, Tensor]], Tensor],
    point: Mapping[str, np.ndarray],
    step: float = DEFAULT_STEP,
) -> dict[str, np.ndarray]:
    """Central differences (f(x+h) - f(x-h)) / 2h for every coordinate of every parameter."""
    values = {name: np.array(v, dtype=np.float64) for name, v in point.items()}
    result: dict[str, np.ndarray] = {}
    for name, base in values.items():
        grad = np.zeros_like(base)
        flat = base.reshape(-1)
        for j in range(flat.size):
            original = flat[j]
            flat[j] = original + step
            f_plus = _evaluate(f, values)
            flat[j] = original - step
            f_minus = _evaluate(f, values)
            flat[j] = original
            grad.reshape(-1)[j] = (f_plus - f_minus) / (2.0 * step)
        result[name] = grad
    return result


def analytic_gradient(
    f: Callable[[dict[str, Tensor]], Tensor],
    point: Mapping[str, np.ndarray],
) -> dict[str, np.ndarray]:
    params = {name: Tensor(np.array(v, dtype=np.float64), requires_grad=True, name=name)
              for name, v in point.items()}
    with GradientTape() as tape:
        tape.watch(params)
        loss = f(params)
    if not np.isfinite(loss.item()):
        raise NonFiniteFunctionValueError(f"function value is not finite: {loss.item()}")
    return backward(loss, tape)


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    point: Mapping[str, np.ndarray],
    step: float = DEFAULT_STEP,
) -> float:
    """Return the max over parameters of the relative analytic-vs-numeric gradient error.

    Per parameter tensor the error is max|a - n| / max(max|a|, max|n|, 1e-8).

    Args:
        f: Scalar function of a dict of parameter tensors
        point: Parameter values to check at
        step: Finite-difference step in [1e-6, 1e-3]

    Returns:
        The largest relative error over all parameters
    """
    if not MIN_STEP <= step <= MAX_STEP:
        raise ValueError(f"step must lie in [{MIN_STEP}, {MAX_STEP}], got {step}")
    analytic = analytic_gradient(f, point)
    numeric = numerical_gradient(f, point, step=step)

    worst = 0.0
    for name, a in analytic.items():
        n = numeric[name]
        scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(n), initial=0.0)), RELATIVE_FLOOR)
        err = float(np.max(np.abs(a - n), initial=0.0)) / scale
        logger.debug(f"grad_check {name}: relative error {err:.3e}")
        worst = max(worst, err)
    return worst
