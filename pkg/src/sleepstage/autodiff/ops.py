"""Differentiable primitives used by the network.

Every function takes and returns :class:`Tensor` objects (plain arrays and
scalars are accepted where a constant makes sense). Each primitive pairs a
numpy forward pass with a closed-form backward closure.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft

from .tensor import Tensor, as_tensor, is_grad_enabled, make_result


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _const(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    if isinstance(a, Tensor):
        b = _const(b, a)
    else:
        a = _const(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor):
        b = _const(b, a)
    else:
        a = _const(a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _const(b, a)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), backward, "relu")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an explicit rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)

    def backward(g):
        return (g * keep,)

    return make_result(x.data * keep, (x,), backward, "dropout")


# ------------------------------------------------------------------ reshaping


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape

    def backward(g):
        return (g.reshape(original),)

    return make_result(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return make_result(x.data.transpose(axes), (x,), backward, "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        index = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            index[axis] = slice(lo, hi)
            out.append(g[tuple(index)])
        return out

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result(data, tensors, backward, "concat")


def pad_last(x: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    if left < 0 or right < 0:
        raise ValueError("padding must be nonnegative")
    n = x.shape[-1]

    def backward(g):
        return (g[..., left : left + n],)

    widths = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    return make_result(np.pad(x.data, widths), (x,), backward, "pad_last")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    axis = axis % (tensors[0].ndim + 1)

    def backward(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    data = np.stack([t.data for t in tensors], axis=axis)
    return make_result(data, tensors, backward, "stack")


def take(x: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows of ``x`` along axis 0 (embedding-style lookup)."""
    indices = np.asarray(indices, dtype=np.intp)

    def backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, indices, g)
        return (grad,)

    return make_result(x.data[indices], (x,), backward, "take")


# ----------------------------------------------------------------- reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = x.shape
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape).copy(),)

    return make_result(np.mean(x.data, axis=axis, keepdims=keepdims), (x,), backward, "mean")


# ------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map on the last axis: ``x @ weight + bias`` with weight (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input feature size {x.shape[-1]} != weight rows {weight.shape[0]}")
    lead = x.shape[:-1]
    flat = x.data.reshape(-1, x.shape[-1])
    out = flat @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[1])
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = flat.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, parents, backward, "linear")


# ---------------------------------------------------------------- convolution


def same_padding(kernel_size: int) -> tuple[int, int]:
    """Left/right padding that keeps length unchanged at stride 1."""
    return (kernel_size - 1) // 2, kernel_size // 2


def _columns(xp: np.ndarray, k: int, stride: int, out_len: int) -> np.ndarray:
    """(N, C, Lp) -> (N, C*k, L_out); each row is a contiguous shifted slice."""
    n, c, _ = xp.shape
    span = (out_len - 1) * stride + 1
    cols = sliding_window_view(xp, span, axis=2)[:, :, :k, ::stride]
    return cols.reshape(n, c * k, out_len)


def _correlate_direct(xp: np.ndarray, w: np.ndarray, stride: int, out_len: int) -> np.ndarray:
    out_ch, in_ch, k = w.shape
    return np.matmul(w.reshape(out_ch, in_ch * k), _columns(xp, k, stride, out_len))


def _use_fft(in_ch: int, k: int, stride: int) -> bool:
    # long kernels on few input channels: FFT wins by an order of magnitude
    return stride == 1 and in_ch <= 4 and k >= 16


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | tuple[int, int] = 0,
    method: str = "auto",
) -> Tensor:
    """Cross-correlation of (batch, in_ch, len) with kernels (out_ch, in_ch, k).

    ``method`` is ``"direct"`` (im2col + matrix product), ``"fft"`` (stride 1
    only) or ``"auto"``. Both give the same result to rounding.
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects 3-D input and weight, got {x.shape} and {weight.shape}")
    n, c, length = x.shape
    out_ch, in_ch, k = weight.shape
    if c != in_ch:
        raise ValueError(f"conv1d: input has {c} channels but weight expects {in_ch}")
    if bias is not None and bias.shape != (out_ch,):
        raise ValueError(f"conv1d: bias shape {bias.shape} != ({out_ch},)")
    pad_l, pad_r = (padding, padding) if isinstance(padding, int) else padding
    padded_len = length + pad_l + pad_r
    if k > padded_len:
        raise ValueError(f"conv1d: kernel size {k} exceeds padded length {padded_len}")
    out_len = (padded_len - k) // stride + 1
    if method == "auto":
        method = "fft" if _use_fft(in_ch, k, stride) else "direct"
    if method == "fft" and stride != 1:
        raise ValueError("fft convolution supports stride 1 only")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad_l, pad_r))) if (pad_l or pad_r) else x.data
    fft_len = sp_fft.next_fast_len(padded_len, real=True)
    saved = {}

    if method == "fft":
        saved["x"] = sp_fft.rfft(xp, fft_len, axis=-1)
        saved["w"] = sp_fft.rfft(weight.data, fft_len, axis=-1)
        prod = np.einsum("ncf,ocf->nof", saved["x"], saved["w"].conj())
        out = sp_fft.irfft(prod, fft_len, axis=-1)[:, :, :out_len]
    else:
        cols = _columns(xp, k, stride, out_len)
        out = np.matmul(weight.data.reshape(out_ch, in_ch * k), cols)
        if weight.requires_grad and is_grad_enabled():
            saved["cols"] = cols  # reused by the weight gradient
        else:
            del cols
    if bias is not None:
        out = out + bias.data[None, :, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = gw = None
        if method == "fft":
            gs = sp_fft.rfft(g, fft_len, axis=-1)
            if weight.requires_grad:
                gw = sp_fft.irfft(np.einsum("nof,ncf->ocf", gs.conj(), saved["x"]), fft_len, axis=-1)[:, :, :k]
                gw = gw.astype(weight.dtype, copy=False)
            if x.requires_grad:
                gxp = sp_fft.irfft(np.einsum("nof,ocf->ncf", gs, saved["w"]), fft_len, axis=-1)[:, :, :padded_len]
                gx = np.ascontiguousarray(gxp[:, :, pad_l : pad_l + length], dtype=x.dtype)
        else:
            if weight.requires_grad:
                cols = saved["cols"]
                gw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
            if x.requires_grad:
                if stride == 1:
                    # full correlation of the output gradient with flipped, channel-swapped kernels
                    gpad = np.pad(g, ((0, 0), (0, 0), (k - 1, k - 1)))
                    flipped = np.ascontiguousarray(weight.data[:, :, ::-1].transpose(1, 0, 2))
                    gxp = _correlate_direct(gpad, flipped, 1, padded_len)
                else:
                    gcols = np.tensordot(g, weight.data, axes=([1], [0]))
                    gxp = np.zeros_like(xp)
                    stop = (out_len - 1) * stride + 1
                    for tap in range(k):
                        gxp[:, :, tap : tap + stop : stride] += gcols[:, :, :, tap].transpose(0, 2, 1)
                gx = np.ascontiguousarray(gxp[:, :, pad_l : pad_l + length])
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return make_result(out, parents, backward, "conv1d")


def max_pool1d(x: Tensor, kernel_size: int, stride: int | None = None) -> Tensor:
    stride = kernel_size if stride is None else stride
    n, c, length = x.shape
    if kernel_size > length:
        raise ValueError(f"max_pool1d: kernel {kernel_size} longer than input {length}")
    out_len = (length - kernel_size) // stride + 1
    if stride == kernel_size:
        # non-overlapping windows: a plain reshape scans faster than a strided view
        windows = x.data[:, :, : out_len * stride].reshape(n, c, out_len, kernel_size)
    else:
        windows = sliding_window_view(x.data, kernel_size, axis=2)[:, :, : (out_len - 1) * stride + 1 : stride, :]
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        grad = np.zeros_like(x.data)
        positions = arg + np.arange(out_len)[None, None, :] * stride
        if stride >= kernel_size:
            np.put_along_axis(grad, positions, g, axis=2)
        else:
            ni, ci, _ = np.indices(positions.shape)
            np.add.at(grad, (ni, ci, positions), g)
        return (grad,)

    return make_result(np.ascontiguousarray(out), (x,), backward, "max_pool1d")


def adaptive_avg_pool1d(x: Tensor) -> Tensor:
    """Average over the length axis down to a single position; returns (batch, ch)."""
    return mean(x, axis=2)


# -------------------------------------------------------------- normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of (batch, ch) or (batch, ch, len) input.

    In training mode batch statistics are used and the running buffers are
    updated in place (unbiased variance, like most frameworks). In eval mode
    the running statistics turn this into a fixed affine map.
    """
    axes = (0,) if x.ndim == 2 else (0, 2)
    shape = (1, -1) if x.ndim == 2 else (1, -1, 1)
    count = int(np.prod([x.shape[a] for a in axes]))

    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        if count > 1:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * count / (count - 1)
    else:
        mu = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shape)) * inv_std.reshape(shape)
    out = xhat * gamma.data.reshape(shape) + beta.data.reshape(shape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shape)
        if training:
            gx = (
                inv_std.reshape(shape)
                / count
                * (
                    count * gxhat
                    - gxhat.sum(axis=axes).reshape(shape)
                    - xhat * (gxhat * xhat).sum(axis=axes).reshape(shape)
                )
            )
        else:
            gx = gxhat * inv_std.reshape(shape)
        return gx, ggamma, gbeta

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        ggamma = (g * xhat).sum(axis=lead)
        gbeta = g.sum(axis=lead)
        gxhat = g * gamma.data
        gx = inv_std / d * (
            d * gxhat - gxhat.sum(axis=-1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), backward, "layer_norm")


# ------------------------------------------------------------ softmax & losses


def _softmax_array(z: np.ndarray, axis: int) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    s = _softmax_array(x.data, axis)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return make_result(out, (x,), backward, "log_softmax")


def cross_entropy(logits: Tensor, targets, class_weights: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits).

    With ``class_weights`` the mean is weighted: sum(w_t * loss) / sum(w_t).
    """
    targets = np.asarray(targets, dtype=np.intp)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects (batch, classes) logits, got {logits.shape}")
    batch, classes = logits.shape
    if targets.shape != (batch,):
        raise ValueError(f"targets shape {targets.shape} != ({batch},)")
    if targets.size and (targets.min() < 0 or targets.max() >= classes):
        bad = targets[(targets < 0) | (targets >= classes)][0]
        raise ValueError(f"target {bad} outside [0, {classes})")

    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(batch), targets]
    if class_weights is None:
        weights = np.ones(batch, dtype=z.dtype)
    else:
        weights = np.asarray(class_weights, dtype=z.dtype)[targets]
    total = weights.sum()
    loss = (weights * nll).sum() / total

    def backward(g):
        probs = np.exp(shifted - lse[:, None])
        probs[np.arange(batch), targets] -= 1.0
        return (probs * (weights / total * g)[:, None],)

    return make_result(np.asarray(loss, dtype=z.dtype), (logits,), backward, "cross_entropy")


# ------------------------------------------------------------------ attention


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(d_head)) v over the last two axes.

    Returns the attended values and the attention weights.
    """
    d_head = q.shape[-1]
    scores = mul(matmul(q, transpose(k, _swap_last(k.ndim))), 1.0 / math.sqrt(d_head))
    weights = softmax(scores, axis=-1)
    return matmul(weights, v), weights


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
