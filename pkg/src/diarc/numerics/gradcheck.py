"""Finite-difference gradient verification.

Runs the graph in a float64 shadow evaluation and compares analytic
gradients against central differences (default h=1e-3). The relative
error denominator is clamped at 1.0 so near-zero gradients are compared
absolutely.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def finite_difference_error(
    build: Callable[[Sequence[Tensor]], Tensor],
    param_values: Sequence[np.ndarray],
    h: float = 1e-3,
) -> float:
    """Max relative error between backward() gradients and central differences.

    ``build`` must construct the scalar loss afresh from the given parameter
    tensors each call; parameters are evaluated in float64.
    """
    params = [Tensor(v, requires_grad=True, dtype=np.float64) for v in param_values]
    loss = build(params)
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    def eval_loss(values: list[np.ndarray]) -> float:
        fresh = [Tensor(v, requires_grad=False, dtype=np.float64) for v in values]
        return float(build(fresh).data)

    worst = 0.0
    base = [p.data.copy() for p in params]
    for k, value in enumerate(base):
        flat = value.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = eval_loss(base)
            flat[i] = orig - h
            down = eval_loss(base)
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * h)
        a = analytic[k].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1.0)
        err = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
        worst = max(worst, err)
    return worst


def model_finite_difference_error(
    loss_fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    h: float = 1e-3,
    max_coords_per_param: int | None = None,
    seed: int = 0,
) -> float:
    """FD check for a model whose parameters live inside module objects.

    Temporarily casts every parameter to float64 in place, computes
    analytic gradients from one backward pass, then perturbs parameter
    entries directly (optionally a random subset per parameter, for large
    composed graphs). The model must be in eval mode so ``loss_fn`` is
    deterministic. Restores the original float32 buffers on exit.
    """
    rng = np.random.default_rng(seed)
    originals = [p.data for _, p in params]
    try:
        for _, p in params:
            p.data = p.data.astype(np.float64)
            p.grad = None
        loss = loss_fn()
        loss.backward()
        base = float(loss.data)
        analytic = [
            p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
            for _, p in params
        ]
        worst = 0.0
        for k, (_, p) in enumerate(params):
            flat = p.data.reshape(-1)
            size = flat.size
            if max_coords_per_param is not None and size > max_coords_per_param:
                coords = rng.choice(size, size=max_coords_per_param, replace=False)
            else:
                coords = np.arange(size)
            a = analytic[k].reshape(-1)
            for i in coords:
                orig = flat[i]
                flat[i] = orig + h
                up = float(loss_fn().data)
                flat[i] = orig - h
                down = float(loss_fn().data)
                flat[i] = orig
                # a large second difference marks a relu/hinge kink inside
                # [x-h, x+h]; central differences are meaningless there
                if abs(up + down - 2.0 * base) > 0.1 * abs(up - down) + 1e-9:
                    continue
                numeric = (up - down) / (2.0 * h)
                denom = max(abs(a[i]), abs(numeric), 1.0)
                worst = max(worst, abs(a[i] - numeric) / denom)
        return worst
    finally:
        for (_, p), data in zip(params, originals):
            p.data = data
            p.grad = None
