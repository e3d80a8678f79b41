"""Central finite-difference gradient oracle."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import NumericError
from .tensor import Tensor, no_grad


def _scalar(out: Tensor) -> float:
    v = float(np.asarray(out.data).sum())
    if not np.isfinite(v):
        raise NumericError("non-finite value during gradient check")
    return v


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5, coords=None) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``f`` maps ``x`` to a scalar tensor. ``coords`` restricts the check to a
    subset of flat indices.
    """
    x.requires_grad = True
    x.grad = np.zeros_like(x.data)
    out = f(x)
    out.backward()
    analytic = x.grad.ravel().copy()
    idx = range(x.size) if coords is None else coords
    flat = x.data.reshape(-1)
    worst = 0.0
    with no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(x))
            flat[i] = orig - h
            fm = _scalar(f(x))
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
    return worst


def grad_check_params(loss: Callable[[], Tensor], params, n_coords: int = 32, rng=None,
                      h: float = 1e-5) -> float:
    """grad_check over a random subset of coordinates drawn across a ParamStore."""
    rng = np.random.default_rng(0) if rng is None else rng
    params.zero_grad()
    loss().backward()
    names = params.names()
    sizes = np.array([params[k].size for k in names])
    picks = rng.choice(sizes.sum(), size=min(n_coords, int(sizes.sum())), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    with no_grad():
        for flat_i in np.sort(picks):
            j = int(np.searchsorted(offsets, flat_i, side="right") - 1)
            p = params[names[j]]
            k = int(flat_i - offsets[j])
            analytic = p.grad.reshape(-1)[k]
            view = p.data.reshape(-1)
            orig = view[k]
            view[k] = orig + h
            fp = _scalar(loss())
            view[k] = orig - h
            fm = _scalar(loss())
            view[k] = orig
            numeric = (fp - fm) / (2 * h)
            worst = max(worst, abs(analytic - numeric) / max(1.0, abs(analytic)))
    return worst
