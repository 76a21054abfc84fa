"""Reverse-mode automatic differentiation over float64 numpy arrays.

A deliberately small tape-based engine: enough operations to express the
graph encoder, the token-fusion transformer, the convolutional stubs and
every training objective, all in 64-bit so analytic gradients can be held
against central finite differences at tight tolerances.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

__all__ = [
    "Tensor",
    "as_tensor",
    "concat",
    "conv2d",
    "gelu",
    "leaky_relu",
    "log_softmax",
    "pad2d",
    "relu",
    "select_row",
    "softmax",
    "upsample_nearest2d",
]


class Tensor:
    """A float64 array plus the tape bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction helpers ------------------------------------------

    def _make(self, data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.data.shape))

        return self._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            if self.requires_grad:
                self._accum(-g)

        return self._make(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.data.shape))

        return self._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other._accum(
                    _unbroadcast(-g * self.data / (other.data**2), other.data.shape)
                )

        return self._make(out_data, (self, other), backward)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent: float):
        e = float(exponent)
        out_data = self.data**e

        def backward(g):
            if self.requires_grad:
                self._accum(g * e * self.data ** (e - 1.0))

        return self._make(out_data, (self,), backward)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        # promote 1-D operands so the backward sees uniform (.., n, k) shapes
        a2 = a[None, :] if a.ndim == 1 else a
        b2 = b[:, None] if b.ndim == 1 else b
        out_data = a2 @ b2
        if b.ndim == 1:
            out_data = np.squeeze(out_data, axis=-1)
        if a.ndim == 1:
            out_data = np.squeeze(out_data, axis=-2 if b.ndim > 1 else -1)

        def backward(g):
            g2 = np.asarray(g)
            if a.ndim == 1:
                g2 = np.expand_dims(g2, -2 if b.ndim > 1 else -1)
            if b.ndim == 1:
                g2 = np.expand_dims(g2, -1)
            if self.requires_grad:
                ga = _unbroadcast(g2 @ _swap_last(b2), a2.shape)
                self._accum(np.squeeze(ga, axis=-2) if a.ndim == 1 else ga)
            if other.requires_grad:
                gb = _unbroadcast(_swap_last(a2) @ g2, b2.shape)
                other._accum(np.squeeze(gb, axis=-1) if b.ndim == 1 else gb)

        return self._make(out_data, (self, other), backward)

    # -- elementwise ----------------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            if self.requires_grad:
                self._accum(g * out_data)

        return self._make(out_data, (self,), backward)

    def log(self):
        def backward(g):
            if self.requires_grad:
                self._accum(g / self.data)

        return self._make(np.log(self.data), (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g):
            if self.requires_grad:
                self._accum(g * 0.5 / out_data)

        return self._make(out_data, (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            if self.requires_grad:
                self._accum(g * (1.0 - out_data**2))

        return self._make(out_data, (self,), backward)

    def sigmoid(self):
        out_data = 1.0 / (1.0 + np.exp(-self.data))

        def backward(g):
            if self.requires_grad:
                self._accum(g * out_data * (1.0 - out_data))

        return self._make(out_data, (self,), backward)

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient is passed only where the clamp is inactive."""
        out_data = np.clip(self.data, lo, hi)
        mask = (self.data > lo) & (self.data < hi)

        def backward(g):
            if self.requires_grad:
                self._accum(g * mask)

        return self._make(out_data, (self,), backward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if self.requires_grad:
                gg = np.asarray(g)
                if axis is not None and not keepdims:
                    gg = np.expand_dims(gg, axis)
                self._accum(np.broadcast_to(gg, self.data.shape).copy())

        return self._make(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape ------------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old_shape = self.data.shape

        def backward(g):
            if self.requires_grad:
                self._accum(g.reshape(old_shape))

        return self._make(self.data.reshape(shape), (self,), backward)

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.data.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)

        def backward(g):
            if self.requires_grad:
                self._accum(g.transpose(inverse))

        return self._make(self.data.transpose(axes), (self,), backward)

    def __getitem__(self, key):
        out_data = self.data[key]

        def backward(g):
            if self.requires_grad:
                full = np.zeros_like(self.data)
                np.add.at(full, key, g)
                self._accum(full)

        return self._make(out_data, (self,), backward)

    # -- autodiff entry point ----------------------------------------------------

    def backward(self) -> None:
        """Backpropagate from a scalar tensor through the recorded tape."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- broadcasting helpers ---------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to its source shape."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _swap_last(a: np.ndarray) -> np.ndarray:
    if a.ndim == 1:
        return a
    return np.swapaxes(a, -1, -2)


# -- free functions ---------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x._accum(g * mask)

    return x._make(np.where(mask, x.data, 0.0), (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x._accum(g * np.where(mask, 1.0, slope))

    return x._make(np.where(mask, x.data, slope * x.data), (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU; smooth everywhere."""
    xd = x.data
    cdf = 0.5 * (1.0 + _erf(xd / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * xd**2) / np.sqrt(2.0 * np.pi)

    def backward(g):
        if x.requires_grad:
            x._accum(g * (cdf + xd * pdf))

    return x._make(xd * cdf, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    e = shifted.exp()
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x - Tensor(x.data.max(axis=axis, keepdims=True))
    return shifted - shifted.exp().sum(axis=axis, keepdims=True).log()


def concat(tensors: list, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    out = Tensor(out_data)
    if any(t.requires_grad for t in tensors):
        out.requires_grad = True
        out._parents = tuple(tensors)
        out._backward = backward
    return out


def select_row(x: Tensor, index: int) -> Tensor:
    """Pick one row of a 2-D tensor (gradient scatters back to that row)."""
    out_data = x.data[index].copy()

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = g
            x._accum(full)

    return x._make(out_data, (x,), backward)


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad the trailing two axes of a (B, C, H, W) tensor."""
    if pad == 0:
        return x
    widths = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    out_data = np.pad(x.data, widths)

    def backward(g):
        if x.requires_grad:
            x._accum(g[:, :, pad:-pad, pad:-pad])

    return x._make(out_data, (x,), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution: x (B, C, H, W), w (O, C, kh, kw), b (O,)."""
    xp = pad2d(x, padding)
    B, C, H, W = xp.data.shape
    O, _, kh, kw = w.data.shape
    ho = (H - kh) // stride + 1
    wo = (W - kw) // stride + 1

    windows = np.lib.stride_tricks.sliding_window_view(xp.data, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # (B, C, ho, wo, kh, kw)
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(B, ho * wo, C * kh * kw)
    w_mat = w.data.reshape(O, C * kh * kw)
    out_data = (cols @ w_mat.T + b.data).transpose(0, 2, 1).reshape(B, O, ho, wo)

    def backward(g):
        g_mat = g.reshape(B, O, ho * wo).transpose(0, 2, 1)  # (B, L, O)
        if b.requires_grad:
            b._accum(g_mat.sum(axis=(0, 1)))
        if w.requires_grad:
            dw = np.einsum("blo,blk->ok", g_mat, cols)
            w._accum(dw.reshape(w.data.shape))
        if xp.requires_grad:
            dcols = (g_mat @ w_mat).reshape(B, ho, wo, C, kh, kw)
            dxp = np.zeros((B, C, H, W))
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            xp._accum(dxp)

    out = Tensor(out_data)
    if xp.requires_grad or w.requires_grad or b.requires_grad:
        out.requires_grad = True
        out._parents = (xp, w, b)
        out._backward = backward
    return out


def upsample_nearest2d(x: Tensor, factor: int) -> Tensor:
    out_data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    B, C, H, W = x.data.shape

    def backward(g):
        if x.requires_grad:
            x._accum(g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)))

    return x._make(out_data, (x,), backward)
