"""NHWC tensor primitives with hand-written backward passes.

Tensors are plain numpy arrays of shape ``[n, h, w, c]``. Every function is
dtype-preserving: float32 arrays stay float32 (training) and float64 arrays
stay float64 (gradient checks and oracles). Kernels are laid out
``[kh, kw, cin, cout]`` for :func:`conv2d`; :func:`conv_transpose2d` takes
the same kernel it is the adjoint of, i.e. ``[kh, kw, cout, cin]`` from its
own point of view.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def _check_rank4(name: str, t: np.ndarray) -> None:
    if t.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 [n, h, w, c], got shape {t.shape}")


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _validate_conv(x: np.ndarray, kernel: np.ndarray, stride: int, pad: int, cin_axis: int):
    _check_rank4("input", x)
    if kernel.ndim != 4:
        raise ShapeError(f"kernel must be rank 4 [kh, kw, cin, cout], got shape {kernel.shape}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"need stride >= 1 and pad >= 0, got stride={stride}, pad={pad}")
    if x.shape[3] != kernel.shape[cin_axis]:
        raise ShapeError(
            f"input channels do not match kernel: input shape {x.shape}, kernel shape {kernel.shape}"
        )


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Patches as ``[n, oh, ow, kh, kw, c]`` (contiguous copy)."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # win: [n, oh, ow, c, kh, kw]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def _col2im(cols: np.ndarray, h: int, w: int, stride: int, pad: int) -> np.ndarray:
    """Scatter-add ``[n, oh, ow, kh, kw, c]`` patches back onto an ``[n, h, w, c]`` grid."""
    n, oh, ow, kh, kw, c = cols.shape
    hp, wp = h + 2 * pad, w + 2 * pad
    # Room for the last window even when it overhangs the padded input.
    out = np.zeros((n, max(hp, (oh - 1) * stride + kh), max(wp, (ow - 1) * stride + kw), c), cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += cols[:, :, :, i, j, :]
    return out[:, pad:pad + h, pad:pad + w, :]


def conv2d(x, kernel, bias=None, stride: int = 1, pad: int = 0):
    """2-D cross-correlation with zero padding.

    Output spatial size is ``floor((h + 2p - kh) / s) + 1``.
    """
    _validate_conv(x, kernel, stride, pad, cin_axis=2)
    kh, kw, cin, cout = kernel.shape
    n, h, w, _ = x.shape
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"kernel {kernel.shape} larger than padded input {x.shape} (pad={pad})")
    cols = _im2col(x, kh, kw, stride, pad)
    oh, ow = cols.shape[1], cols.shape[2]
    y = cols.reshape(n * oh * ow, kh * kw * cin) @ kernel.reshape(kh * kw * cin, cout)
    y = y.reshape(n, oh, ow, cout)
    if bias is not None:
        y += bias
    return y


def conv2d_backward(x, kernel, grad_out, stride: int = 1, pad: int = 0):
    """Gradients of :func:`conv2d` w.r.t. input, kernel and bias."""
    kh, kw, cin, cout = kernel.shape
    n, h, w, _ = x.shape
    oh, ow = grad_out.shape[1], grad_out.shape[2]
    g2 = grad_out.reshape(n * oh * ow, cout)
    cols = _im2col(x, kh, kw, stride, pad).reshape(n * oh * ow, kh * kw * cin)
    grad_kernel = (cols.T @ g2).reshape(kernel.shape)
    gcols = (g2 @ kernel.reshape(kh * kw * cin, cout).T).reshape(n, oh, ow, kh, kw, cin)
    grad_x = _col2im(gcols, h, w, stride, pad)
    grad_bias = g2.sum(axis=0)
    return grad_x, grad_kernel, grad_bias


def conv_transpose_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return stride * (size - 1) + k - 2 * pad


def conv_transpose2d(u, kernel, bias=None, stride: int = 1, pad: int = 0):
    """Transposed convolution, the exact adjoint of :func:`conv2d` with the same kernel.

    ``kernel`` has shape ``[kh, kw, cout, cin]`` where ``cin`` matches the
    channels of ``u``. Output spatial size is ``s (h - 1) + kh - 2p``.
    """
    _validate_conv(u, kernel, stride, pad, cin_axis=3)
    kh, kw, cout, cin = kernel.shape
    n, h, w, _ = u.shape
    oh = conv_transpose_output_size(h, kh, stride, pad)
    ow = conv_transpose_output_size(w, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"transposed conv output would be empty for input {u.shape}, kernel {kernel.shape}")
    gcols = (u.reshape(n * h * w, cin) @ kernel.reshape(kh * kw * cout, cin).T).reshape(n, h, w, kh, kw, cout)
    y = _col2im(gcols, oh, ow, stride, pad)
    if bias is not None:
        y += bias
    return y


def conv_transpose2d_backward(u, kernel, grad_out, stride: int = 1, pad: int = 0):
    kh, kw, cout, cin = kernel.shape
    n, h, w, _ = u.shape
    grad_u = conv2d(grad_out, kernel, None, stride, pad)
    cols = _im2col(grad_out, kh, kw, stride, pad).reshape(n * h * w, kh * kw * cout)
    grad_kernel = (cols.T @ u.reshape(n * h * w, cin)).reshape(kernel.shape)
    grad_bias = grad_out.sum(axis=(0, 1, 2))
    return grad_u, grad_kernel, grad_bias


@dataclass
class BatchNormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    training: bool


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool = True,
               momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel batch normalization over (n, h, w).

    Returns ``(y, cache, (new_running_mean, new_running_var))``. The running
    statistics are returned rather than written in place; eval mode returns
    them unchanged. The running variance uses the unbiased batch variance.
    """
    _check_rank4("input", x)
    c = x.shape[3]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"gamma/beta must have shape ({c},), got {gamma.shape} and {beta.shape}")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if training:
        m = x.shape[0] * x.shape[1] * x.shape[2]
        if m < 2:
            raise ShapeError(f"batch_norm in train mode needs n*h*w >= 2, got input shape {x.shape}")
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        new_mean = (1 - momentum) * running_mean + momentum * mean
        new_var = (1 - momentum) * running_var + momentum * var * (m / (m - 1))
        stats = (new_mean.astype(running_mean.dtype), new_var.astype(running_var.dtype))
    else:
        mean, var = running_mean, running_var
        stats = (running_mean, running_var)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x - mean) * inv_std
    y = gamma * x_hat + beta
    return y, BatchNormCache(x_hat, inv_std, gamma, training), stats


def batch_norm_backward(cache: BatchNormCache, grad_out):
    """Returns ``(grad_x, grad_gamma, grad_beta)``."""
    axes = (0, 1, 2)
    grad_beta = grad_out.sum(axis=axes)
    grad_gamma = (grad_out * cache.x_hat).sum(axis=axes)
    g_hat = grad_out * cache.gamma
    if not cache.training:
        return g_hat * cache.inv_std, grad_gamma, grad_beta
    grad_x = cache.inv_std * (
        g_hat - g_hat.mean(axis=axes) - cache.x_hat * (g_hat * cache.x_hat).mean(axis=axes)
    )
    return grad_x, grad_gamma, grad_beta


def leaky_relu(x, alpha: float = 0.2):
    return np.where(x > 0, x, alpha * x)


def leaky_relu_backward(x, grad_out, alpha: float = 0.2):
    return np.where(x > 0, grad_out, alpha * grad_out)


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def tanh(x):
    return np.tanh(x)


def tanh_backward(y, grad_out):
    """Takes the forward *output* ``y = tanh(x)``."""
    return grad_out * (1 - y * y)


def sigmoid(x):
    # Branch-free stable form: exp of a non-positive argument only.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e))


def sigmoid_backward(y, grad_out):
    """Takes the forward *output* ``y = sigmoid(x)``."""
    return grad_out * y * (1 - y)


def softplus(x):
    """``log(1 + exp(x))`` without overflow."""
    return np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
