"""Minimal reverse-mode differentiation over numpy arrays.

Only the operations a desk-scale densely connected network needs: channel
concatenation and slicing, per-channel affine, ReLU, stride-1 convolution,
2x2 average pooling, stride-2 zero insertion, global average pooling, a
linear layer and softmax cross-entropy.  Arrays are NCHW, float64.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "concat",
    "split",
    "affine",
    "relu",
    "conv2d",
    "avg_pool2",
    "dilate2",
    "upconv2d",
    "global_avg_pool",
    "linear",
    "cross_entropy",
    "weighted_sum",
]


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "name")

    def __init__(
        self,
        data: np.ndarray,
        parents: Sequence["Tensor"] = (),
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        name: str = "",
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def backward(self) -> None:
        """Accumulate d(self)/d(t) into ``t.grad`` for every ancestor ``t``."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
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
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node.parents, node.backward_fn(node.grad)):
                if g is None:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    if len(xs) == 1:
        return xs[0]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def back(g: np.ndarray):
        return np.split(g, cuts, axis=axis)

    return Tensor(np.concatenate([x.data for x in xs], axis=axis), xs, back, "concat")


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    cuts = np.cumsum(sizes)[:-1]
    parts = np.split(x.data, cuts, axis=axis)
    out = []
    start = 0
    for size, part in zip(sizes, parts):
        def back(g: np.ndarray, start=start, size=size):
            full = np.zeros_like(x.data)
            idx = [slice(None)] * x.data.ndim
            idx[axis] = slice(start, start + size)
            full[tuple(idx)] = g
            return (full,)

        out.append(Tensor(part, (x,), back, "slice"))
        start += size
    return out


def affine(x: Tensor, scale: Tensor, shift: Tensor) -> Tensor:
    """Per-channel ``x * scale + shift`` (normalization without batch statistics)."""
    shape = (1, -1) + (1,) * (x.data.ndim - 2)
    s = scale.data.reshape(shape)
    axes = (0,) + tuple(range(2, x.data.ndim))

    def back(g: np.ndarray):
        return g * s, (g * x.data).sum(axis=axes), g.sum(axis=axes)

    return Tensor(x.data * s + shift.data.reshape(shape), (x, scale, shift), back, "affine")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def back(g: np.ndarray):
        return (g * mask,)

    return Tensor(x.data * mask, (x,), back, "relu")


def _pad(a: np.ndarray, pad: tuple[int, int, int, int]) -> np.ndarray:
    top, bottom, left, right = pad
    return np.pad(a, ((0, 0), (0, 0), (top, bottom), (left, right)))


def conv2d(x: Tensor, w: Tensor, pad: int | tuple[int, int, int, int] = 0, bias: Tensor | None = None) -> Tensor:
    """Stride-1 cross-correlation; ``w`` is (C_out, C_in, k, k)."""
    if isinstance(pad, int):
        pad = (pad, pad, pad, pad)
    k = w.shape[2]
    xp = _pad(x.data, pad)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N, C, Ho, Wo, k, k
    out = np.einsum("nchwij,ocij->nohw", win, w.data, optimize=True)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    Ho, Wo = out.shape[2:]
    top, _, left, _ = pad
    H, W = x.shape[2:]

    def back(g: np.ndarray):
        gw = np.einsum("nchwij,nohw->ocij", win, g, optimize=True)
        gxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gxp[:, :, i : i + Ho, j : j + Wo] += np.einsum("nohw,oc->nchw", g, w.data[:, :, i, j])
        gx = gxp[:, :, top : top + H, left : left + W]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor(out, parents, back, "conv2d")


def avg_pool2(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"cannot 2x2-pool a {h}x{w} map")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def back(g: np.ndarray):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) / 4.0,)

    return Tensor(out, (x,), back, "avg_pool2")


def dilate2(x: Tensor) -> Tensor:
    """Insert one zero between neighbouring pixels: HxW -> (2H-1)x(2W-1)."""
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h - 1, 2 * w - 1))
    out[:, :, ::2, ::2] = x.data

    def back(g: np.ndarray):
        return (g[:, :, ::2, ::2],)

    return Tensor(out, (x,), back, "dilate2")


def upconv2d(x: Tensor, w: Tensor) -> Tensor:
    """Stride-2 transposed convolution that exactly doubles H and W."""
    k = w.shape[2]
    p = (k - 1) // 2
    out_pad = 2 + 2 * p - k
    before = k - 1 - p
    return conv2d(dilate2(x), w, pad=(before, before + out_pad, before, before + out_pad))


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape

    def back(g: np.ndarray):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return Tensor(x.data.mean(axis=(2, 3)), (x,), back, "gap")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w.T + b`` with ``w`` shaped (C_out, C_in)."""

    def back(g: np.ndarray):
        return g @ w.data, g.T @ x.data, g.sum(axis=0)

    return Tensor(x.data @ w.data.T + b.data, (x, w, b), back, "linear")


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy; class axis 1, targets hold class indices."""
    z = logits.data
    if z.ndim > 2:
        z = np.moveaxis(z, 1, -1).reshape(-1, z.shape[1])
    t = np.asarray(targets).reshape(-1)
    if len(t) != len(z):
        raise ValueError(f"{len(t)} targets for {len(z)} predictions")
    shifted = z - z.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    m = len(t)
    loss = -logp[np.arange(m), t].mean()

    def back(g: np.ndarray):
        p = np.exp(logp)
        p[np.arange(m), t] -= 1.0
        p *= g / m
        if logits.data.ndim > 2:
            n, c = logits.shape[:2]
            p = np.moveaxis(p.reshape((n,) + logits.shape[2:] + (c,)), -1, 1)
        return (p,)

    return Tensor(np.array(loss), (logits,), back, "cross_entropy")


def weighted_sum(xs: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    ws = [float(w) for w in weights]

    def back(g: np.ndarray):
        return [g * w for w in ws]

    return Tensor(sum(w * x.data for w, x in zip(ws, xs)), xs, back, "weighted_sum")
