"""Minimal reverse-mode autodiff over numpy arrays.

Just enough ops for the flow-sequence encoder: embedding lookups, linear
maps, batched matmul, masked softmax, layer norm, GELU and fused softmax
cross-entropy. Tensors carry float32 during training; passing float64
parameters runs the identical graph in double precision, which is what the
finite-difference gradient checks use.
"""
from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    """A node in the computation graph: value, gradient, backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-accumulate gradients from this scalar node."""
        if self.data.size != 1:
            raise ValueError("backward() starts from a scalar loss")
        order = []
        seen = set()
        stack = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name})"


def _make(data, parents, backward):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two same-shape tensors."""
    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return _make(a.data + b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    def backward(g):
        if a.requires_grad:
            a.accumulate(g * c)

    return _make(a.data * c, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    def backward(g):
        if a.requires_grad:
            inv = np.argsort(axes)
            a.accumulate(np.ascontiguousarray(g.transpose(inv)))

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward)


def lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Embedding lookup: rows of table (V, d) selected by integer ids."""
    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.ravel(), g.reshape(-1, table.data.shape[1]))
            table.accumulate(gt)

    return _make(table.data[ids], (table,), backward)


def concat_last(parts: list[Tensor]) -> Tensor:
    """Concatenate along the trailing axis."""
    widths = [p.data.shape[-1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate(np.ascontiguousarray(g[..., lo:hi]))

    return _make(np.concatenate([p.data for p in parts], axis=-1), tuple(parts), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map on the trailing axis: x @ w + b."""
    k = x.data.shape[-1]

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if w.requires_grad:
            x2 = x.data.reshape(-1, k)
            w.accumulate(x2.T @ g2)
        if b.requires_grad:
            b.accumulate(g2.sum(axis=0))
        if x.requires_grad:
            x.accumulate((g2 @ w.data.T).reshape(x.data.shape))

    return _make(x.data @ w.data + b.data, (x, w, b), backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul on the trailing two axes."""
    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.swapaxes(-1, -2))
        if b.requires_grad:
            b.accumulate(a.data.swapaxes(-1, -2) @ g)

    return _make(a.data @ b.data, (a, b), backward)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Softmax over the key axis of scores (B, Q, L); mask (B, L) selects keys."""
    mask8 = np.ascontiguousarray(mask, dtype=np.uint8)
    out_data = kernels.masked_softmax_forward(np.ascontiguousarray(scores.data), mask8)

    def backward(g):
        if scores.requires_grad:
            scores.accumulate(kernels.masked_softmax_backward(np.ascontiguousarray(g), out_data))

    return _make(out_data, (scores,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    """Row-wise layer normalization over the trailing axis."""
    shape = x.data.shape
    x2 = np.ascontiguousarray(x.data.reshape(-1, shape[-1]))
    out2, mean, rstd = kernels.layer_norm_forward(x2, gain.data, bias.data, eps)

    def backward(g):
        g2 = np.ascontiguousarray(g.reshape(-1, shape[-1]))
        gx, ggain, gbias = kernels.layer_norm_backward(g2, x2, gain.data, mean, rstd)
        if x.requires_grad:
            x.accumulate(gx.reshape(shape))
        if gain.requires_grad:
            gain.accumulate(ggain)
        if bias.requires_grad:
            bias.accumulate(gbias)

    return _make(out2.reshape(shape), (x, gain, bias), backward)


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximation GELU, elementwise."""
    shape = x.data.shape
    flat = np.ascontiguousarray(x.data.ravel())
    out = kernels.gelu_forward(flat).reshape(shape)

    def backward(g):
        if x.requires_grad:
            gflat = np.ascontiguousarray(g.ravel())
            x.accumulate(kernels.gelu_backward(gflat, flat).reshape(shape))

    return _make(out, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted mean softmax cross-entropy; rows with zero weight drop out.

    A zero total weight yields a zero loss with zero gradient (callers decide
    whether that deserves a warning).
    """
    t64 = np.ascontiguousarray(targets, dtype=np.int64)
    w = np.ascontiguousarray(weights, dtype=logits.data.dtype)
    loss_sum, w_sum, probs = kernels.softmax_xent_forward(
        np.ascontiguousarray(logits.data), t64, w
    )
    value = np.asarray(loss_sum / w_sum if w_sum > 0 else 0.0, dtype=logits.data.dtype)

    def backward(g):
        if logits.requires_grad and w_sum > 0:
            s = float(g) / w_sum
            logits.accumulate(kernels.softmax_xent_backward(probs, t64, w, s))

    return _make(value, (logits,), backward)
