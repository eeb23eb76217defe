from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import copy_params, grads_of, named_leaves, replace_leaves, to_tensors
from .tensor import Tensor, backward


def analytic_grads(f: Callable[[object], Tensor], params):
    """Run ``f`` on a differentiable view of ``params`` and return (loss, grads)."""
    tparams = to_tensors(params)
    loss = f(tparams)
    if loss.requires_grad:
        backward(loss)
    return loss.item(), grads_of(tparams)


def grad_check_report(
    f: Callable[[object], Tensor],
    params,
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    elementwise: bool = True,
) -> dict[str, float]:
    """Relative error per parameter path.

    By default the error of a path is the worst per-coordinate
    ``|a - n| / max(|a|, |n|, 1e-8)``.  ``elementwise=False`` instead takes
    the ratio of 2-norms over the probed coordinates, which stays meaningful
    when single coordinates are small enough to drown in finite-difference
    round-off.  ``max_coords`` caps how many coordinates of each leaf are
    probed (chosen with ``seed``); ``None`` probes all of them.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    _, grads = analytic_grads(f, params)
    analytic = dict(named_leaves(grads))
    base = {k: np.array(v, dtype=np.float64) for k, v in named_leaves(copy_params(params))}
    rng = np.random.default_rng(seed)

    def value(values):
        return f(to_tensors(replace_leaves(params, values), requires_grad=False)).item()

    report: dict[str, float] = {}
    for path, arr in base.items():
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst = 0.0
        a_flat = np.asarray(analytic[path]).reshape(-1)
        a_vec, n_vec = [], []
        for c in coords:
            orig = flat[c]
            flat[c] = orig + eps
            f_plus = value(base)
            flat[c] = orig - eps
            f_minus = value(base)
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            a = a_flat[c]
            a_vec.append(a)
            n_vec.append(numeric)
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-8))
        if elementwise:
            report[path] = worst
        else:
            a_v, n_v = np.array(a_vec), np.array(n_vec)
            denom = max(np.linalg.norm(a_v), np.linalg.norm(n_v), 1e-8)
            report[path] = float(np.linalg.norm(a_v - n_v) / denom)
    return report


def grad_check(
    f: Callable[[object], Tensor],
    params,
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    elementwise: bool = True,
) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    report = grad_check_report(f, params, eps, max_coords, seed, elementwise)
    return max(report.values(), default=0.0)
