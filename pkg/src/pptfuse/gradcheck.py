"""Central finite-difference checks for tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import GradTape, Tensor


def autograd(fn: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    for p in params:
        p.grad = None
    with GradTape() as tape:
        loss = fn()
    tape.backward(loss)
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-3,
                 index: Sequence[int] | None = None) -> np.ndarray:
    """``(f(p + h) - f(p - h)) / 2h`` per element, perturbing ``param.data`` in place.

    ``index`` restricts the check to a subset of flat positions; other
    entries of the result are NaN.
    """
    flat = param.data.reshape(-1)
    out = np.full(flat.shape, np.nan, dtype=np.float64)
    idx = range(flat.size) if index is None else index
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn().item())
        flat[i] = orig - h
        fm = float(fn().item())
        flat[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(param.shape)


GRAD_FLOOR = 1e-9


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = GRAD_FLOOR) -> float:
    """``max|a - n| / max(max|a|, max|n|, floor)`` over the checked entries.

    The floor keeps structurally zero gradients (e.g. a key bias, which
    softmax cannot see) from turning round-off into a relative error of 1.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    mask = ~np.isnan(n)
    a, n = a[mask], n[mask]
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max() / scale)


def model_gradient_errors(model, x: np.ndarray, loss_fn, h: float = 1e-3, autograd_dtype=np.float64,
                          per_tensor: int | None = None, seed: int = 0,
                          floor_ratio: float = 0.0) -> dict[str, float]:
    """Relative error of tape gradients vs float64 central differences, per parameter tensor.

    ``loss_fn(x_tensor, model)`` must return a scalar tensor.  The tape runs
    on a copy of ``model`` in ``autograd_dtype``; the differences always run
    on a float64 copy.  ``per_tensor`` samples that many entries of each
    tensor (all entries when None).  The error floor is
    ``max(GRAD_FLOOR, floor_ratio * largest |gradient| anywhere)``.
    """
    m_ad = model.astype(autograd_dtype)
    x_ad = Tensor(x, dtype=autograd_dtype)
    named = m_ad.named_parameters()
    grads = autograd(lambda: loss_fn(x_ad, m_ad), [p for _, p in named])
    floor = max(GRAD_FLOOR, floor_ratio * max(float(np.abs(g).max()) for g in grads))
    m64 = model.astype(np.float64)
    x64 = Tensor(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    out = {}
    for (name, p), g in zip(m64.named_parameters(), grads):
        idx = None
        if per_tensor is not None and p.data.size > per_tensor:
            idx = rng.choice(p.data.size, size=per_tensor, replace=False)
        num = numeric_grad(lambda: loss_fn(x64, m64), p, h, index=idx)
        out[name] = relative_error(g, num, floor)
    return out
