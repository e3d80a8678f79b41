"""Distribution ops over heatmaps: temperature softmax, CE, KL, entropy."""
from __future__ import annotations

import numpy as np

from ..errors import InvalidArgument, NumericError
from .tensor import Tensor, _make, as_tensor

LOG_EPS = 1e-12


def softmax_temp(logits: Tensor, tau: float, batch: bool = False) -> Tensor:
    """Softmax of ``logits / tau`` over all entries, or per leading row if ``batch``.

    Heatmaps are flattened so the whole grid forms one categorical distribution.
    """
    logits = as_tensor(logits)
    if not tau > 0:
        raise InvalidArgument(f"temperature must be positive, got {tau}")
    if logits.size == 0:
        raise InvalidArgument("softmax of empty tensor")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("non-finite logits")
    shape = logits.shape
    z = logits.data.reshape(shape[0], -1) if batch else logits.data.reshape(1, -1)
    z = z / tau
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def back(g):
        g = g.reshape(p.shape)
        gz = p * (g - (p * g).sum(axis=1, keepdims=True)) / tau
        return (gz.reshape(shape),)

    return _make(p.reshape(shape), (logits,), back)


def _check_pair(target, pred: Tensor) -> np.ndarray:
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise InvalidArgument(f"shape mismatch: target{t.shape} vs pred{pred.shape}")
    return t


def _reduce_axes(ndim: int, batch: bool):
    return tuple(range(1 if batch else 0, ndim))


def cross_entropy(target, pred: Tensor, batch: bool = False) -> Tensor:
    """-sum target * log(max(pred, eps)); the target never receives gradient.

    With ``batch`` the leading axis indexes samples and one value per sample
    is returned.
    """
    pred = as_tensor(pred)
    t = _check_pair(target, pred)
    axes = _reduce_axes(pred.data.ndim, batch)
    clamped = np.maximum(pred.data, LOG_EPS)
    out = -(t * np.log(clamped)).sum(axis=axes)
    live = pred.data > LOG_EPS

    def back(g):
        g = np.reshape(g, np.shape(g) + (1,) * len(axes))
        return (np.where(live, -g * t / clamped, 0.0),)

    return _make(np.asarray(out), (pred,), back)


def entropy(p, batch: bool = False) -> np.ndarray:
    """Shannon entropy in nats (no gradient).

    Uses the same log clamp as cross_entropy so that cross_entropy(p, p)
    equals entropy(p) exactly and KL(p || p) is zero.
    """
    d = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    axes = _reduce_axes(d.ndim, batch)
    return -(d * np.log(np.maximum(d, LOG_EPS))).sum(axis=axes)


def kl_divergence(target, pred: Tensor, batch: bool = False) -> Tensor:
    """sum target * log(target / pred) == cross_entropy - entropy(target)."""
    pred = as_tensor(pred)
    t = _check_pair(target, pred)
    ce = cross_entropy(t, pred, batch=batch)
    return ce - entropy(t, batch=batch)
