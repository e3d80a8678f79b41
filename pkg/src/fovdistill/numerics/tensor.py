"""Dense float64 tensors with a dynamic reverse-mode tape.

Each op records its parents and a closure mapping the output gradient to one
gradient per parent. ``Tensor.backward`` walks the graph in reverse
topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from ..errors import InvalidArgument, NumericError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Run ops without recording them on the tape."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        if not self.requires_grad:
            raise InvalidArgument("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise InvalidArgument("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = node.grad + g if node.grad is not None else g.copy()
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError("non-finite values produced by forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out.grad = None
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, (a, b), back)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log of non-positive value")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise NumericError("sqrt of negative value")
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


# ---------------------------------------------------------------------------
# shape and reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def spatial_mean(x: Tensor) -> Tensor:
    """Mean over the trailing two (H, W) axes."""
    return mean(x, axis=(-2, -1))


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; axis=1 is the channel axis for (N, C, H, W)."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise InvalidArgument("matmul expects operands with ndim >= 2")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back)


# ---------------------------------------------------------------------------
# convolution and sampling


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. x: (N, C, H, W); w: (O, C, k, k); b: (O,)."""
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise InvalidArgument(f"conv2d shape mismatch: x{x.shape} w{w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = _pad_hw(x.data, padding)
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise InvalidArgument("conv2d kernel larger than padded input")
    # im2col as (kh, kw, C, N, Ho, Wo): one strided slice copy per kernel tap
    cols = np.empty((kh, kw, c, n, ho, wo))
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[i, j] = xt[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(kh * kw * c, n * ho * wo)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(o, -1)  # (O, kh*kw*C)
    out = wmat @ cols
    if b is not None:
        out += b.data[:, None]
    out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))

    def back(g):
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
        gw = (g2 @ cols.T).reshape(o, kh, kw, c).transpose(0, 3, 1, 2)
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ g2).reshape(kh, kw, c, n, ho, wo)
            gxp = np.zeros((c, n) + xp.shape[2:])
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[i, j]
            gxp = gxp.transpose(1, 0, 2, 3)
            gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=1)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, back)


def grid_sample(src: Tensor, rows: np.ndarray, cols: np.ndarray, wrap_cols: bool = False) -> Tensor:
    """Bilinear sampling of ``src`` (..., H, W) at fractional pixel indices.

    Rows are clamped to [0, H-1]; columns either wrap modulo W or clamp.
    Differentiable w.r.t. ``src`` only.
    """
    h, w = src.shape[-2:]
    rows = np.clip(np.asarray(rows, dtype=np.float64), 0.0, h - 1.0)
    cols = np.asarray(cols, dtype=np.float64)
    if wrap_cols:
        cols = np.mod(cols, w)
    else:
        cols = np.clip(cols, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = rows - r0
    fc = cols - c0
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = (c0 + 1) % w if wrap_cols else np.minimum(c0 + 1, w - 1)
    c0 = c0 % w if wrap_cols else c0
    taps = ((r0, c0, (1 - fr) * (1 - fc)), (r0, c1, (1 - fr) * fc),
            (r1, c0, fr * (1 - fc)), (r1, c1, fr * fc))
    out = np.zeros(src.shape[:-2] + rows.shape)
    for r, c, wt in taps:
        out = out + src.data[..., r, c] * wt

    def back(g):
        gs = np.zeros(src.shape)
        flat = gs.reshape(src.shape[:-2] + (h * w,))
        lead = flat.shape[:-1]
        flat2 = flat.reshape(-1, h * w)
        g2 = g.reshape(-1, rows.size)
        for r, c, wt in taps:
            idx = (r * w + c).ravel()
            np.add.at(flat2, (slice(None), idx), g2 * wt.ravel())
        return (flat2.reshape(lead + (h, w)).reshape(src.shape),)

    return _make(out, (src,), back)


def _fft_shape(n: int) -> int:
    from scipy.fft import next_fast_len

    return next_fast_len(n, real=True)


def correlate2d(s: Tensor, t: Tensor) -> Tensor:
    """Summed-over-channels 'same' cross-correlation with zero padding.

    s: (N, C, H, W) search maps; t: (N, C, h, w) or (C, h, w) templates.
    out[n, a, b] = sum_{c,i,j} s[n, c, a - h//2 + i, b - w//2 + j] * t[n, c, i, j]
    with out-of-range samples of s treated as zero. Output: (N, H, W).
    """
    s, t = as_tensor(s), as_tensor(t)
    shared = t.data.ndim == 3
    tdat = t.data[None] if shared else t.data
    if s.data.ndim != 4 or tdat.shape[1] != s.shape[1] or (not shared and tdat.shape[0] != s.shape[0]):
        raise InvalidArgument(f"correlate2d shape mismatch: s{s.shape} t{t.shape}")
    from scipy import fft as sfft

    n, c, H, W = s.shape
    h, w = tdat.shape[-2:]
    ph, pw = h // 2, w // 2
    sp = np.pad(s.data, ((0, 0), (0, 0), (ph, h - 1 - ph), (pw, w - 1 - pw)))
    fh, fw = _fft_shape(sp.shape[2]), _fft_shape(sp.shape[3])
    fs = sfft.rfft2(sp, s=(fh, fw))
    ft = sfft.rfft2(tdat, s=(fh, fw))
    out = sfft.irfft2((fs * np.conj(ft)).sum(axis=1), s=(fh, fw))[:, :H, :W]
    out = np.ascontiguousarray(out)

    def back(g):
        fg = sfft.rfft2(g, s=(fh, fw))[:, None]
        gsp = sfft.irfft2(fg * ft, s=(fh, fw))[:, :, :sp.shape[2], :sp.shape[3]]
        gs = gsp[:, :, ph:ph + H, pw:pw + W]
        gt = None
        if t.requires_grad:
            gt = sfft.irfft2(fs * np.conj(fg), s=(fh, fw))[:, :, :h, :w]
            if shared:
                gt = gt.sum(axis=0)
        return np.ascontiguousarray(gs), gt

    return _make(out, (s, t), back)


def _integral(a: np.ndarray) -> np.ndarray:
    out = np.zeros(a.shape[:-2] + (a.shape[-2] + 1, a.shape[-1] + 1))
    out[..., 1:, 1:] = a.cumsum(axis=-2).cumsum(axis=-1)
    return out


def box_sum(x: Tensor, h: int, w: int) -> Tensor:
    """Channel-summed 'same' window sums: equals correlate2d(x, ones((C, h, w)))."""
    if x.data.ndim != 4:
        raise InvalidArgument("box_sum expects (N, C, H, W)")
    n, c, H, W = x.shape
    ph, pw = h // 2, w // 2
    y = np.pad(x.data.sum(axis=1), ((0, 0), (ph, h - 1 - ph), (pw, w - 1 - pw)))
    ii = _integral(y)
    out = ii[:, h:h + H, w:w + W] - ii[:, :H, w:w + W] - ii[:, h:h + H, :W] + ii[:, :H, :W]

    def back(g):
        gp = np.pad(g, ((0, 0), (h - 1, h - 1), (w - 1, w - 1)))
        gi = _integral(gp)
        Hp, Wp = H + h - 1, W + w - 1
        full = gi[:, h:h + Hp, w:w + Wp] - gi[:, :Hp, w:w + Wp] - gi[:, h:h + Hp, :Wp] + gi[:, :Hp, :Wp]
        gx = full[:, ph:ph + H, pw:pw + W]
        return (np.broadcast_to(gx[:, None], x.shape).copy(),)

    return _make(out, (x,), back)
