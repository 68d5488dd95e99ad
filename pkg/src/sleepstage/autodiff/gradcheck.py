"""Central finite-difference gradient checker.

Numeric derivatives use the fourth-order central stencil
(-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h. Its truncation error is
small enough that h can stay large, which keeps rounding noise well below
1e-4 relative even on coordinates whose gradient nearly cancels.

Networks with ReLU and max-pool are only piecewise smooth, and a step can
straddle a kink. Each step also yields the second-order one-sided stencils
(-3 f(x) + 4 f(x+h) - f(x+2h)) / 2h and its mirror, reusing the same
evaluations, so a kink on one side still leaves a clean estimate from the
other. Passing several step sizes scores each coordinate by its best
estimate; a wrong analytic gradient disagrees with all of them.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad

TINY = 1e-8


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    """|a - n| / max(|a|, |n|); falls back to |a - n| when both are below 1e-8."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.where(scale < TINY, diff, diff / np.where(scale < TINY, 1.0, scale))


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray | Tensor],
    eps: float | Sequence[float] = 1e-4,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``fn`` receives one :class:`Tensor` per input and must return a scalar.
    Inputs are promoted to float64. Passing an existing Tensor (e.g. a model
    parameter) checks it in place; its data is restored afterwards. With
    ``max_coords`` only that many randomly chosen coordinates per input are
    probed.
    """
    tensors = []
    for value in inputs:
        if isinstance(value, Tensor):
            if value.data.dtype != np.float64:
                raise TypeError(f"grad_check needs float64 tensors, got {value.data.dtype} for {value.name}")
            value.requires_grad = True
            tensors.append(value)
        else:
            tensors.append(Tensor(np.array(value, dtype=np.float64), requires_grad=True))
    for t in tensors:
        t.grad = None

    out = fn(*tensors)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar output, got shape {out.shape}")
    out.backward()
    f0 = float(out.data)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]

    steps = (eps,) if np.isscalar(eps) else tuple(eps)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    with no_grad():
        for t, a in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            for i in coords:
                orig = flat[i]
                best = np.inf
                for h in steps:
                    f = {}
                    for k in (-2, -1, 1, 2):
                        flat[i] = orig + k * h
                        f[k] = float(fn(*tensors).data)
                    flat[i] = orig
                    numeric = np.array([
                        (f[-2] - 8.0 * f[-1] + 8.0 * f[1] - f[2]) / (12.0 * h),
                        (-3.0 * f0 + 4.0 * f[1] - f[2]) / (2.0 * h),
                        (3.0 * f0 - 4.0 * f[-1] + f[-2]) / (2.0 * h),
                    ])
                    best = min(best, float(relative_error(a.reshape(-1)[i], numeric).min()))
                    if best < 1e-6:
                        break
                worst = max(worst, best)
    return worst
