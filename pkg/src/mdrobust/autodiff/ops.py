"""Differentiable primitives.

Every op takes and returns :class:`Tensor` objects and records a vector-Jacobian
product when an input tracks gradients. Spatial ops accept either a single
``[C, H, W]`` sample or a batch ``[N, C, H, W]``; dense and the loss likewise
accept an optional leading batch axis.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from .tensor import ContractError, DimensionError, Tensor, make_result


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result("mul", a.data * b.data, (a, b), vjp)


def tsum(a: Tensor) -> Tensor:
    def vjp(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_result("sum", np.asarray(a.data.sum()), (a,), vjp)


def mean(a: Tensor) -> Tensor:
    n = a.size

    def vjp(g):
        return (np.full(a.shape, float(g) / n),)

    return make_result("mean", np.asarray(a.data.mean()), (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    def vjp(g):
        return (g.reshape(a.shape),)

    return make_result("reshape", a.data.reshape(shape), (a,), vjp)


def flatten(a: Tensor, batched: bool = True) -> Tensor:
    """Collapse all axes but the first (batched) or all axes."""
    shape = (a.shape[0], -1) if batched and a.ndim > 1 else (-1,)
    return reshape(a, shape)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must lie in [0, 1), got {slope}")
    positive = x.data >= 0
    out = np.where(positive, x.data, slope * x.data)

    def vjp(g):
        return (np.where(positive, g, slope * g),)

    return make_result("leaky_relu", out, (x,), vjp)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``weight @ x + bias`` on a vector or a batch of row vectors."""
    if weight.ndim != 2 or bias.shape != (weight.shape[0],):
        raise DimensionError(f"weight {weight.shape} / bias {bias.shape} mismatch")
    if x.ndim not in (1, 2) or x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T + bias.data

    def vjp(g):
        g2 = g.reshape(-1, weight.shape[0])
        x2 = x.data.reshape(-1, weight.shape[1])
        dx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        dw = g2.T @ x2 if weight.requires_grad else None
        db = g2.sum(axis=0) if bias.requires_grad else None
        return dx, dw, db

    return make_result("dense", out, (x, weight, bias), vjp)


@lru_cache(maxsize=64)
def _fft_shape(h: int, w: int) -> tuple[int, int]:
    return sfft.next_fast_len(h, real=True), sfft.next_fast_len(w, real=True)


def _stack(a: np.ndarray, swap: bool = False) -> np.ndarray:
    """``[p, q, u, v]`` -> contiguous ``[u*v, p, q]`` (or ``[u*v, q, p]`` when swapped)."""
    m = a.reshape(a.shape[0], a.shape[1], -1)
    return np.ascontiguousarray(m.transpose(2, 1, 0) if swap else m.transpose(2, 0, 1))


def _unstack(m: np.ndarray, spatial: tuple[int, ...]) -> np.ndarray:
    return np.ascontiguousarray(m.transpose(1, 2, 0)).reshape(m.shape[1], m.shape[2], *spatial)


# Channel mixing is a batched matmul over the spectrum, one small matrix per frequency.
def _mix_forward(xf, wf_conj):  # [n,c,f] x [o,c,f] -> [n,o,f]
    return _unstack(_stack(xf) @ _stack(wf_conj, swap=True), xf.shape[2:])


def _mix_input_grad(gf, wf):  # [n,o,f] x [o,c,f] -> [n,c,f]
    return _unstack(_stack(gf) @ _stack(wf), gf.shape[2:])


def _mix_kernel_grad(xf, gf_conj):  # [n,c,f] x [n,o,f] -> [o,c,f]
    return _unstack(_stack(gf_conj, swap=True) @ _stack(xf), xf.shape[2:])


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    Evaluated through real FFTs of the padded input; the transform length
    covers the padded extent, so the circular products equal the linear ones
    and no wrap-around enters the kept region.
    """
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise DimensionError(f"conv2d input must be [C,H,W] or [N,C,H,W], got {x.shape}")
    if kernels.ndim != 4:
        raise DimensionError(f"kernels must be [C_out,C_in,k,k], got {kernels.shape}")
    xd = x.data if batched else x.data[None]
    n, c_in, h, w = xd.shape
    c_out, kc, kh, kw = kernels.shape
    if kc != c_in:
        raise DimensionError(f"input has {c_in} channels, kernels expect {kc}")
    if bias.shape != (c_out,):
        raise DimensionError(f"bias {bias.shape} does not match {c_out} output channels")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    lh, lw = h + 2 * padding, w + 2 * padding
    if lh < kh or lw < kw:
        raise DimensionError(f"padded input {lh}x{lw} smaller than kernel {kh}x{kw}")
    ho1, wo1 = lh - kh + 1, lw - kw + 1
    fh, fw = _fft_shape(lh, lw)

    xpad = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else xd
    xf = sfft.rfft2(xpad, s=(fh, fw))
    wf = sfft.rfft2(kernels.data, s=(fh, fw))
    yf = _mix_forward(xf, np.conj(wf))
    y = sfft.irfft2(yf, s=(fh, fw))[:, :, :ho1, :wo1]
    if stride > 1:
        y = y[:, :, ::stride, ::stride]
    y = y + bias.data[None, :, None, None]
    out = y if batched else y[0]

    def vjp(g):
        g4 = g if batched else g[None]
        if stride > 1:
            full = np.zeros((n, c_out, ho1, wo1))
            full[:, :, ::stride, ::stride] = g4
            g4 = full
        gf = sfft.rfft2(g4, s=(fh, fw))
        dx = dw = db = None
        if x.requires_grad:
            dxf = _mix_input_grad(gf, wf)
            dxp = sfft.irfft2(dxf, s=(fh, fw))[:, :, padding:padding + h, padding:padding + w]
            dx = np.ascontiguousarray(dxp if batched else dxp[0])
        if kernels.requires_grad:
            dwf = _mix_kernel_grad(xf, np.conj(gf))
            dw = np.ascontiguousarray(sfft.irfft2(dwf, s=(fh, fw))[:, :, :kh, :kw])
        if bias.requires_grad:
            db = g4.sum(axis=(0, 2, 3))
        return dx, dw, db

    return make_result("conv2d", out, (x, kernels, bias), vjp)


def max_pool2d(x: Tensor, window: int = 2, stride: int | None = None) -> Tensor:
    """Windowed maximum; the gradient goes to the first maximal element of each window."""
    stride = window if stride is None else stride
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise DimensionError(f"max_pool2d input must be [C,H,W] or [N,C,H,W], got {x.shape}")
    xd = x.data if batched else x.data[None]
    n, c, h, w = xd.shape
    if window > h or window > w:
        raise DimensionError(f"window {window} larger than input {h}x{w}")
    ho, wo = (h - window) // stride + 1, (w - window) // stride + 1
    if stride == window:
        cropped = xd[:, :, : ho * window, : wo * window]
        win = cropped.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5)
    else:
        view = np.lib.stride_tricks.sliding_window_view(xd, (window, window), axis=(2, 3))
        win = view[:, :, ::stride, ::stride]
    win = win.reshape(n, c, ho, wo, window * window)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    out = y if batched else y[0]

    def vjp(g):
        g4 = g if batched else g[None]
        routed = np.zeros((n, c, ho, wo, window * window))
        np.put_along_axis(routed, idx[..., None], g4[..., None], axis=-1)
        routed = routed.reshape(n, c, ho, wo, window, window)
        dx = np.zeros_like(xd)
        if stride == window:
            block = routed.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * window, wo * window)
            dx[:, :, : ho * window, : wo * window] = block
        else:
            for i in range(window):
                for j in range(window):
                    dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += routed[..., i, j]
        return (dx if batched else dx[0],)

    return make_result("max_pool2d", out, (x,), vjp)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a plain array (no gradient tracking)."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean ``-log softmax(logits)[label]`` over the batch.

    ``logits`` is ``[K]`` with an integer label, or ``[N, K]`` with ``N`` labels.
    """
    single = logits.ndim == 1
    z = logits.data[None] if single else logits.data
    if z.ndim != 2:
        raise DimensionError(f"logits must be [K] or [N,K], got {logits.shape}")
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    k = z.shape[1]
    if y.shape != (z.shape[0],):
        raise DimensionError(f"{y.shape[0]} labels for {z.shape[0]} logit rows")
    if np.any(y < 0) or np.any(y >= k):
        raise IndexError(f"labels must lie in [0, {k}), got {y.tolist()}")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = float(np.mean(log_norm - shifted[rows, y]))

    def vjp(g):
        p = np.exp(shifted - log_norm[:, None])
        p[rows, y] -= 1.0
        p *= float(g) / z.shape[0]
        return (p[0] if single else p,)

    return make_result("softmax_cross_entropy", np.asarray(loss), (logits,), vjp)


__all__ = [
    "ContractError",
    "DimensionError",
    "add",
    "conv2d",
    "dense",
    "flatten",
    "leaky_relu",
    "max_pool2d",
    "mean",
    "mul",
    "reshape",
    "softmax",
    "softmax_cross_entropy",
    "tsum",
]
