"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar result accumulates exact gradients into every
reachable tensor with ``requires_grad``.  The op set is intentionally small:
what a convolutional encoder, an MLP head and a contrastive loss need.
All computation is float64.
"""

from __future__ import annotations

from typing import Callable, Optional, Tuple

import numpy as np

from ..errors import ShapeMismatch


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the shape of its source."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: Tuple["Tensor", ...] = (),
                 backward: Optional[Callable[[np.ndarray], None]] = None):
        data = np.asarray(data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(float)
        self.data = data
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    # -- graph traversal ----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatch("backward() expects a scalar loss")
        order = []
        seen = set()

        def visit(node: "Tensor"):
            if id(node) in seen or not node.requires_grad:
                return
            seen.add(id(node))
            for parent in node._parents:
                visit(parent)
            order.append(node)

        visit(self)
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- elementwise arithmetic ----------------------------------------------

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def __add__(self, other):
        other = self._lift(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g, other.data.shape)
        out._backward = bw
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))

        def bw(g):
            if self.requires_grad:
                self.grad += -g
        out._backward = bw
        return out

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g * other.data, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(g * self.data, other.data.shape)
        out._backward = bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)
        out = Tensor(self.data / other.data, parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self.grad += _unbroadcast(g / other.data, self.data.shape)
            if other.requires_grad:
                other.grad += _unbroadcast(-g * self.data / other.data ** 2, other.data.shape)
        out._backward = bw
        return out

    # -- unary ops -----------------------------------------------------------

    def exp(self):
        value = np.exp(self.data)
        out = Tensor(value, parents=(self,))

        def bw(g):
            if self.requires_grad:
                self.grad += g * value
        out._backward = bw
        return out

    def log(self):
        out = Tensor(np.log(self.data), parents=(self,))

        def bw(g):
            if self.requires_grad:
                self.grad += g / self.data
        out._backward = bw
        return out

    def sqrt(self):
        value = np.sqrt(self.data)
        out = Tensor(value, parents=(self,))

        def bw(g):
            if self.requires_grad:
                self.grad += g * 0.5 / value
        out._backward = bw
        return out

    def relu(self):
        out = Tensor(np.maximum(self.data, 0.0), parents=(self,))

        def bw(g):
            if self.requires_grad:
                self.grad += g * (self.data > 0)
        out._backward = bw
        return out

    def clip_min(self, floor: float):
        """max(x, floor); gradient flows only where x exceeds the floor."""
        out = Tensor(np.maximum(self.data, floor), parents=(self,))

        def bw(g):
            if self.requires_grad:
                self.grad += g * (self.data > floor)
        out._backward = bw
        return out

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,))

        def bw(g):
            if self.requires_grad:
                self.grad += g.reshape(self.data.shape)
        out._backward = bw
        return out

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.data.ndim)))
        inverse = np.argsort(axes)
        out = Tensor(self.data.transpose(axes), parents=(self,))

        def bw(g):
            if self.requires_grad:
                self.grad += g.transpose(inverse)
        out._backward = bw
        return out

    @property
    def T(self):
        return self.transpose()

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def bw(g):
            if not self.requires_grad:
                return
            if axis is None:
                self.grad += np.broadcast_to(g, self.data.shape)
            else:
                expanded = g if keepdims else np.expand_dims(g, axis)
                self.grad += np.broadcast_to(expanded, self.data.shape)
        out._backward = bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- linear algebra --------------------------------------------------------

    def matmul(self, other: "Tensor"):
        other = self._lift(other)
        out = Tensor(self.data @ other.data, parents=(self, other))

        def bw(g):
            if self.requires_grad:
                self.grad += g @ other.data.T
            if other.requires_grad:
                other.grad += self.data.T @ g
        out._backward = bw
        return out

    __matmul__ = matmul

    def take(self, indices: np.ndarray):
        """Gather rows along axis 0."""
        indices = np.asarray(indices)
        out = Tensor(self.data[indices], parents=(self,))

        def bw(g):
            if self.requires_grad:
                np.add.at(self.grad, indices, g)
        out._backward = bw
        return out

    def take_pairs(self, rows: np.ndarray, cols: np.ndarray):
        """Gather matrix entries at (rows[k], cols[k])."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        out = Tensor(self.data[rows, cols], parents=(self,))

        def bw(g):
            if self.requires_grad:
                np.add.at(self.grad, (rows, cols), g)
        out._backward = bw
        return out


# ---------------------------------------------------------------------------
# Convolution


def _im2col(padded: np.ndarray, kernel: int, stride: int, oh: int, ow: int) -> np.ndarray:
    b, c = padded.shape[:2]
    sb, sc, sy, sx = padded.strides
    view = np.lib.stride_tricks.as_strided(
        padded,
        shape=(b, oh, ow, c, kernel, kernel),
        strides=(sb, sy * stride, sx * stride, sc, sy, sx),
        writeable=False,
    )
    return view.reshape(b * oh * ow, c * kernel * kernel)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution: x (B,C,H,W), weight (O,C,k,k), bias (O,)."""
    b, c, h, w = x.data.shape
    o, c2, kh, kw = weight.data.shape
    if c != c2 or kh != kw:
        raise ShapeMismatch("weight does not match input channels")
    kernel = kh
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    if padding:
        padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        padded = x.data
    cols = _im2col(padded, kernel, stride, oh, ow)              # (B*OH*OW, C*k*k)
    w_flat = weight.data.reshape(o, -1)
    out_flat = cols @ w_flat.T + bias.data                       # (B*OH*OW, O)
    out_data = out_flat.reshape(b, oh, ow, o).transpose(0, 3, 1, 2)
    out = Tensor(out_data, parents=(x, weight, bias))

    def bw(g):
        g_flat = g.transpose(0, 2, 3, 1).reshape(-1, o)          # (B*OH*OW, O)
        if bias.requires_grad:
            bias.grad += g_flat.sum(axis=0)
        if weight.requires_grad:
            weight.grad += (g_flat.T @ cols).reshape(weight.data.shape)
        if x.requires_grad:
            g_cols = g_flat @ w_flat                             # (B*OH*OW, C*k*k)
            g_cols = g_cols.reshape(b, oh, ow, c, kernel, kernel)
            g_padded = np.zeros_like(padded)
            for i in range(kernel):
                for j in range(kernel):
                    g_padded[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                        g_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            if padding:
                x.grad += g_padded[:, :, padding:-padding, padding:-padding]
            else:
                x.grad += g_padded
    out._backward = bw
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, C) spatial mean."""
    return x.mean(axis=(2, 3))


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x (B, in) @ weight (in, out) + bias (out,)."""
    return x.matmul(weight) + bias
