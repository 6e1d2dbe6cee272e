"""Finite-difference verification of tape gradients.

The numerical side is computed purely with numpy central differences on
forward evaluations under ``no_grad``, so it shares nothing with the
backward pass it checks.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, no_grad

__all__ = ["finite_diff_check", "max_rel_error", "check_parameter_gradients"]

# Relative error floor: entries below this magnitude are compared absolutely,
# which keeps finite-difference noise on near-zero gradients from dominating.
_REL_FLOOR = 1e-6


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = _REL_FLOOR) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def _scalarize(fn: Callable[[Tensor], Tensor], weights: dict) -> Callable[[Tensor], Tensor]:
    """Reduce a tensor-valued function to a scalar via a fixed random projection."""

    def scalar_fn(x: Tensor) -> Tensor:
        y = fn(x)
        if y.size == 1:
            return y.reshape(()) if y.ndim else y
        key = y.shape
        if key not in weights:
            rng = np.random.default_rng(0)
            weights[key] = rng.standard_normal(y.shape).astype(np.float64)
        w = Tensor(weights[key].astype(y.dtype))
        return (y * w).sum()

    return scalar_fn


def finite_diff_check(fn: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between tape gradient of ``fn`` at ``x`` and central differences.

    ``fn`` may return any shape; non-scalar outputs are reduced through a fixed
    random projection so every output coordinate influences the check.
    """
    if eps <= 0:
        raise ValueError("finite_diff_check: eps must be positive")
    weights: dict = {}
    scalar_fn = _scalarize(fn, weights)

    probe = Tensor(np.array(x.data, copy=True), requires_grad=True)
    loss = scalar_fn(probe)
    loss.backward()
    analytic = probe.grad
    if analytic is None:
        analytic = np.zeros_like(probe.data)

    numeric = np.zeros_like(x.data, dtype=np.float64)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            bumped = np.array(x.data, copy=True).reshape(-1)
            bumped[i] = orig + eps
            hi = scalar_fn(Tensor(bumped.reshape(x.shape))).item()
            bumped[i] = orig - eps
            lo = scalar_fn(Tensor(bumped.reshape(x.shape))).item()
            numeric.reshape(-1)[i] = (hi - lo) / (2.0 * eps)

    return max_rel_error(analytic, numeric)


def check_parameter_gradients(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    n_coords: int = 10,
    eps: float = 1e-5,
    seed: int = 0,
) -> tuple[float, str]:
    """Spot-check parameter gradients of a scalar loss by coordinate perturbation.

    Samples ``n_coords`` coordinates across all parameters (every parameter is
    hit at least once when ``n_coords`` allows), perturbs each in place, and
    compares the resulting central difference with the recorded gradient.
    Returns ``(max relative error, name of worst coordinate)``.
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    loss.backward()

    rng = np.random.default_rng(seed)
    names = sorted(params)
    coords: list[tuple[str, int]] = []
    for rank, name in enumerate(rng.permutation(names)):
        if rank >= n_coords:
            break
        coords.append((str(name), int(rng.integers(params[str(name)].size))))
    while len(coords) < n_coords:
        name = str(names[int(rng.integers(len(names)))])
        coords.append((name, int(rng.integers(params[name].size))))

    worst = 0.0
    worst_name = ""
    with no_grad():
        for name, flat_idx in coords:
            p = params[name]
            flat = p.data.reshape(-1)
            orig = flat[flat_idx]
            flat[flat_idx] = orig + eps
            hi = loss_fn().item()
            flat[flat_idx] = orig - eps
            lo = loss_fn().item()
            flat[flat_idx] = orig
            numeric = (hi - lo) / (2.0 * eps)
            analytic = 0.0 if p.grad is None else float(p.grad.reshape(-1)[flat_idx])
            err = max_rel_error(np.array(analytic), np.array(numeric))
            if err > worst:
                worst = err
                worst_name = f"{name}[{flat_idx}]"
    return worst, worst_name
