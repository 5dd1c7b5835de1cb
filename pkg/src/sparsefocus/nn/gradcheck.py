"""Finite-difference verification of the analytic backward passes.

Central differences are trustworthy only in float64; callers are expected
to build their probe models with dtype=np.float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, backward, zero_grads


def grad_check(loss_fn: Callable[[], Tensor], params: Sequence[Parameter],
               eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn must rebuild the scalar loss from the live param values on each
    call and be deterministic. Relative error per coordinate is
    |a - n| / max(|a|, |n|, 1e-12).
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")

    zero_grads(params)
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("loss_fn produced a non-finite loss")
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().data)
            flat[i] = orig - eps
            down = float(loss_fn().data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError("loss_fn produced a non-finite loss")
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(aflat[i]), abs(numeric), 1e-12)
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst
