"""Minimal reverse-mode automatic differentiation.

A Tensor wraps a float64 numpy array and remembers how it was made; a
backward pass walks the tape in reverse topological order. The operator
set is fixed to what the denoising network needs: (batched) matmul,
broadcasting add and mul, gelu, softmax, layer norm, gather, reshape,
transpose, slicing, and concatenation. The network is small and its
topology fixed, so this is deliberately a tape, not a compiler.
"""

from __future__ import annotations

import numpy as np

_GELU_C = float(np.sqrt(2.0 / np.pi))


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn")

    def __init__(self, data, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents: tuple[Tensor, ...] = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def backward(self, seed: np.ndarray) -> None:
        """Accumulate gradients into every reachable parent tensor."""
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != self.data.shape:
            raise ValueError(f"seed shape {seed.shape} != tensor shape {self.data.shape}")
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
            for p in node.parents:
                stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = seed
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None:
                    continue
                # accumulation always allocates, so views returned by
                # backward functions are never mutated
                parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out_data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return Tensor(out_data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c) -> Tensor:
    return Tensor(a.data + c, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading batch dimensions must match exactly."""
    if a.data.ndim != b.data.ndim or a.data.shape[:-2] != b.data.shape[:-2]:
        raise ValueError(f"matmul batch dims differ: {a.data.shape} vs {b.data.shape}")
    out_data = a.data @ b.data

    def backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return Tensor(out_data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with the bias broadcast over leading dimensions."""
    out_data = x.data @ w.data + b.data

    def backward(g):
        gx = g @ w.data.T
        gw = np.tensordot(x.data, g, axes=(tuple(range(x.data.ndim - 1)),) * 2)
        gb = _unbroadcast(g, b.data.shape)
        return gx, gw, gb

    return Tensor(out_data, (x, w, b), backward)


def gelu(a: Tensor) -> Tensor:
    """Smooth tanh-form gaussian error linear unit."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + th)

    def backward(g):
        sech2 = 1.0 - th**2
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * sech2 * d_inner),)

    return Tensor(out_data, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis, numerically shifted."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = np.sum(g * y, axis=-1, keepdims=True)
        return (y * (g - dot),)

    return Tensor(y, (a,), backward)


def layer_norm(a: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalization over the last axis without learned affine terms."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(g):
        n = x.shape[-1]
        gy = g * inv
        term_mean = gy.mean(axis=-1, keepdims=True)
        term_proj = (g * y).mean(axis=-1, keepdims=True) * y * inv
        return (gy - term_mean - term_proj,)

    return Tensor(y, (a,), backward)


def gather(table: Tensor, indices: np.ndarray) -> Tensor:
    """Rows of a 2D table selected by an integer index array."""
    indices = np.asarray(indices, dtype=np.int64)
    out_data = table.data[indices]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, indices, g)
        return (gt,)

    return Tensor(out_data, (table,), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = a.data.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(int(i) for i in np.argsort(axes))
    return Tensor(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def split(a: Tensor, parts: int) -> list[Tensor]:
    """Split the last axis into equal parts."""
    n = a.data.shape[-1]
    if n % parts:
        raise ValueError("last axis not divisible")
    width = n // parts
    outs = []
    for i in range(parts):
        lo = i * width

        def backward(g, lo=lo):
            full = np.zeros_like(a.data)
            full[..., lo : lo + width] = g
            return (full,)

        outs.append(Tensor(a.data[..., lo : lo + width], (a,), backward))
    return outs


def concat_rows(tensors: list[Tensor]) -> Tensor:
    """Concatenate 2D tensors along axis 0."""
    sizes = [t.data.shape[0] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=0)

    def backward(g):
        outs = []
        offset = 0
        for s in sizes:
            outs.append(g[offset : offset + s])
            offset += s
        return tuple(outs)

    return Tensor(out_data, tuple(tensors), backward)
