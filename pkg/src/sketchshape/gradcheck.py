"""Central finite-difference validation of tape gradients."""

from __future__ import annotations

import numpy as np

from .autodiff import GradTape, Parameter

__all__ = ["finite_difference_check", "max_relative_error"]


def max_relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_difference_check(
    loss_fn,
    params: list[Parameter],
    h: float = 1e-5,
    coords_per_param: int = 6,
    seed: int = 0,
) -> float:
    """Compare tape gradients of `loss_fn` against central differences.

    `loss_fn(tape)` must rebuild the forward pass from the current parameter
    values and return a 1x1 loss tensor. For each parameter a deterministic
    subset of coordinates is probed (all of them when the tensor is small).
    Returns the worst relative error observed.
    """
    for p in params:
        p.grad = None
    with GradTape() as tape:
        loss = loss_fn(tape)
        tape.backward(loss)
    analytic = {id(p): np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params}

    def loss_value() -> float:
        with GradTape() as tape:
            return loss_fn(tape).item()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        n = p.value.size
        if n <= coords_per_param:
            flat_idx = np.arange(n)
        else:
            flat_idx = rng.choice(n, size=coords_per_param, replace=False)
        for k in flat_idx:
            i, j = np.unravel_index(k, p.value.shape)
            orig = p.value[i, j]
            p.value[i, j] = orig + h
            up = loss_value()
            p.value[i, j] = orig - h
            down = loss_value()
            p.value[i, j] = orig
            numeric = (up - down) / (2.0 * h)
            worst = max(worst, max_relative_error(analytic[id(p)][i, j], numeric))
    return worst
