"""Minimal reverse-mode differentiation over (batch, channels, length) arrays.

Each op computes its forward value with numpy and registers a closure that
maps the output gradient to input gradients. ``Tensor.backward`` walks the
recorded graph in reverse topological order, visiting every node once.
Gradients accumulate additively, so a tensor used twice receives the sum.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, op: str = ""):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} != value shape {self.data.shape}")

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
            for parent in reversed(node._parents):
                if id(parent) not in seen:
                    stack.append((parent, False))

        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward, op) -> Tensor:
    out = Tensor(data, op=op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _im2col(x, K):
    """(B, C, L) -> (B*L, C*K) windows of the zero-padded input, centered on each sample."""
    B, C, L = x.shape
    if K == 1:
        return np.ascontiguousarray(x.transpose(0, 2, 1)).reshape(B * L, C)
    pad = (K - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    return sliding_window_view(xp, K, axis=2).transpose(0, 2, 1, 3).reshape(B * L, C * K)


# --- ops -----------------------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """'Same'-padded stride-1 cross-correlation. x:(B,Cin,L), w:(Cout,Cin,K), bias:(Cout,)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 3:
        raise ShapeError("conv1d expects x (B,Cin,L) and w (Cout,Cin,K)")
    B, cin, L = x.shape
    cout, cin_w, K = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d channel mismatch: input {cin}, weight {cin_w}")
    if K % 2 == 0:
        raise ShapeError("conv1d kernel size must be odd")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (cout,):
            raise ShapeError(f"bias shape {bias.shape} != ({cout},)")

    cols = _im2col(x.data, K)  # (B*L, Cin*K)
    w2 = w.data.reshape(cout, cin * K)
    out = (cols @ w2.T).reshape(B, L, cout).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * L, cout)
        if w.requires_grad:
            w._accumulate((g2.T @ cols).reshape(w.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            # transposed convolution: correlate with the flipped, channel-swapped kernel
            flipped = w.data[:, :, ::-1].transpose(1, 0, 2).reshape(cin, cout * K)
            gx = (_im2col(g, K) @ flipped.T).reshape(B, L, cin).transpose(0, 2, 1)
            x._accumulate(gx)

    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, backward, "conv1d")


def maxpool1d_2(x: Tensor) -> Tensor:
    """Pairwise max along length; ties send the gradient to the earlier sample."""
    x = as_tensor(x)
    B, C, L = x.shape
    if L % 2:
        raise ShapeError(f"maxpool1d_2 needs an even length, got {L}")
    pairs = x.data.reshape(B, C, L // 2, 2)
    take_second = pairs[..., 1] > pairs[..., 0]
    out = np.where(take_second, pairs[..., 1], pairs[..., 0])

    def backward(g):
        gx = np.zeros((B, C, L // 2, 2), dtype=x.dtype)
        gx[..., 0] = np.where(take_second, 0, g)
        gx[..., 1] = np.where(take_second, g, 0)
        x._accumulate(gx.reshape(B, C, L))

    return _result(out, (x,), backward, "maxpool1d_2")


def nearest_upsample_2(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = np.repeat(x.data, 2, axis=2)

    def backward(g):
        B, C, L2 = g.shape
        x._accumulate(g.reshape(B, C, L2 // 2, 2).sum(axis=3))

    return _result(out, (x,), backward, "nearest_upsample_2")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ShapeError(f"concat_channels shape mismatch {a.shape} vs {b.shape}")
    ca = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g[:, :ca])
        if b.requires_grad:
            b._accumulate(g[:, ca:])

    return _result(out, (a, b), backward, "concat_channels")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _result(a.data + b.data, (a, b), backward, "add")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0
    out = np.where(positive, x.data, 0).astype(x.dtype, copy=False)

    def backward(g):
        x._accumulate(np.where(positive, g, 0))

    return _result(out, (x,), backward, "relu")


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)

    def backward(g):
        x._accumulate(g * s * (1 - s))

    return _result(s, (x,), backward, "sigmoid")


def batchnorm1d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
                training: bool, momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel normalization over (batch, length).

    Returns ``(out, new_running_mean, new_running_var)``; the running arrays
    passed in are left untouched. Training mode normalizes with the biased
    batch variance and blends the unbiased one into the running estimate.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    B, C, L = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError("batchnorm scale/shift must have one entry per channel")
    running_mean = np.asarray(running_mean)
    running_var = np.asarray(running_var)

    if training:
        n = B * L
        mean = x.data.mean(axis=(0, 2))
        centered = x.data - mean[None, :, None]
        var = (centered ** 2).mean(axis=(0, 2))
        unbiased = var * n / max(n - 1, 1)
        new_mean = (1 - momentum) * running_mean + momentum * mean
        new_var = (1 - momentum) * running_var + momentum * unbiased
    else:
        n = None
        mean, var = running_mean, running_var
        centered = x.data - mean[None, :, None]
        new_mean, new_var = running_mean.copy(), running_var.copy()

    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = centered * inv_std[None, :, None]
    out = gamma.data[None, :, None] * xhat + beta.data[None, :, None]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None]
            if training:
                s1 = gxhat.sum(axis=(0, 2))[None, :, None]
                s2 = (gxhat * xhat).sum(axis=(0, 2))[None, :, None]
                gx = (inv_std[None, :, None] / n) * (n * gxhat - s1 - xhat * s2)
            else:
                gx = gxhat * inv_std[None, :, None]
            x._accumulate(gx)

    result = _result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batchnorm1d")
    return result, new_mean.astype(running_mean.dtype), new_var.astype(running_var.dtype)


def weighted_sum(x: Tensor, weights) -> Tensor:
    """Scalar ``sum(x * weights)``; handy for projecting outputs in gradient checks."""
    x = as_tensor(x)
    weights = np.asarray(weights, dtype=x.dtype)

    def backward(g):
        x._accumulate(g * weights)

    return _result(np.array(np.sum(x.data * weights)), (x,), backward, "weighted_sum")
