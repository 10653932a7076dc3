"""Dense 3D CNN kernels with hand-written backward passes.

Tensors are plain C-order numpy arrays; every op preserves the input dtype
(training runs in float32, gradient checking in float64). Layout conventions:
activations are (N, C, T, H, W), conv weights (F, C, kt, kh, kw), linear
weights (Out, In).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def conv3d_out_extent(extent: int, kernel: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - kernel) // stride + 1


def _check_conv(x, weight, bias, stride, pad):
    if x.ndim != 5:
        raise ShapeError(f"conv3d input must be 5-d (N,C,T,H,W), got shape {x.shape}")
    if weight.ndim != 5:
        raise ShapeError(f"conv3d weight must be 5-d (F,C,kt,kh,kw), got shape {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"input channels {x.shape[1]} do not match weight channels {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weight.shape[0]} filters")
    if stride < 1 or pad < 0:
        raise ShapeError(f"stride must be >= 1 and pad >= 0, got stride={stride} pad={pad}")
    outs = tuple(
        conv3d_out_extent(x.shape[2 + i], weight.shape[2 + i], stride, pad) for i in range(3)
    )
    if min(outs) < 1 or min(
        x.shape[2 + i] + 2 * pad - weight.shape[2 + i] for i in range(3)
    ) < 0:
        raise ShapeError(
            f"kernel {weight.shape[2:]} with stride={stride} pad={pad} does not fit "
            f"input extents {x.shape[2:]}"
        )
    return outs


def _padded_windows(x, kshape, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, kshape, axis=(2, 3, 4))
    return win[:, :, ::stride, ::stride, ::stride]  # (N,C,T',H',W',kt,kh,kw)


def conv3d_forward(x, weight, bias, stride: int = 1, pad: int = 0):
    """Cross-correlation over (T,H,W); zero padding contributes zeros."""
    _check_conv(x, weight, bias, stride, pad)
    win = _padded_windows(x, weight.shape[2:], stride, pad)
    out = np.tensordot(win, weight, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # (N,T',H',W',F)
    out = np.moveaxis(out, -1, 1)
    out = out + bias.reshape(1, -1, 1, 1, 1)
    return np.ascontiguousarray(out)


def conv3d_backward(x, weight, grad_out, stride: int = 1, pad: int = 0):
    """Exact adjoints of conv3d_forward: (grad_input, grad_weight, grad_bias)."""
    bias = np.zeros(weight.shape[0], dtype=weight.dtype)
    to, ho, wo = _check_conv(x, weight, bias, stride, pad)
    expected = (x.shape[0], weight.shape[0], to, ho, wo)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out shape {grad_out.shape} does not match output {expected}")

    win = _padded_windows(x, weight.shape[2:], stride, pad)
    grad_weight = np.tensordot(grad_out, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
    grad_bias = grad_out.sum(axis=(0, 2, 3, 4))

    # scatter grad_out * weight back onto the padded input, one kernel tap at a time
    gcols = np.tensordot(grad_out, weight, axes=([1], [0]))  # (N,T',H',W',C,kt,kh,kw)
    gcols = np.moveaxis(gcols, 4, 1)  # (N,C,T',H',W',kt,kh,kw)
    n, c, t, h, w = x.shape
    kt, kh, kw = weight.shape[2:]
    gxp = np.zeros((n, c, t + 2 * pad, h + 2 * pad, w + 2 * pad), dtype=grad_out.dtype)
    for i in range(kt):
        for j in range(kh):
            for k in range(kw):
                gxp[
                    :,
                    :,
                    i : i + stride * (to - 1) + 1 : stride,
                    j : j + stride * (ho - 1) + 1 : stride,
                    k : k + stride * (wo - 1) + 1 : stride,
                ] += gcols[..., i, j, k]
    grad_input = gxp[:, :, pad : pad + t, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(grad_input), grad_weight, grad_bias


def maxpool3d(x, window):
    """Non-overlapping max pooling.

    Returns (pooled, winners) where winners holds, per output element, the flat
    index of the winning input element (ties go to the lowest flat index, which
    is what argmax's first-occurrence rule yields under the window enumeration
    order used here). Input extents must be divisible by the window.
    """
    if x.ndim != 5:
        raise ShapeError(f"maxpool3d input must be 5-d, got shape {x.shape}")
    pt, ph, pw = window
    n, c, t, h, w = x.shape
    if min(pt, ph, pw) < 1:
        raise ShapeError(f"pool window extents must be >= 1, got {window}")
    if t % pt or h % ph or w % pw:
        raise ShapeError(f"input extents {(t, h, w)} not divisible by pool window {window}")
    to, ho, wo = t // pt, h // ph, w // pw
    r = (
        x.reshape(n, c, to, pt, ho, ph, wo, pw)
        .transpose(0, 1, 2, 4, 6, 3, 5, 7)
        .reshape(n, c, to, ho, wo, pt * ph * pw)
    )
    local = r.argmax(axis=-1)
    out = np.take_along_axis(r, local[..., None], axis=-1)[..., 0]

    dt = local // (ph * pw)
    dh = (local // pw) % ph
    dw = local % pw
    tt = np.arange(to).reshape(1, 1, to, 1, 1) * pt + dt
    hh = np.arange(ho).reshape(1, 1, 1, ho, 1) * ph + dh
    ww = np.arange(wo).reshape(1, 1, 1, 1, wo) * pw + dw
    nn = np.arange(n).reshape(n, 1, 1, 1, 1)
    cc = np.arange(c).reshape(1, c, 1, 1, 1)
    winners = (((nn * c + cc) * t + tt) * h + hh) * w + ww
    return np.ascontiguousarray(out), winners.astype(np.int64)


def maxpool3d_backward(grad_out, winners, input_shape):
    """Route each upstream gradient element to its stored winner, zeros elsewhere."""
    if grad_out.shape != winners.shape:
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match winner index shape {winners.shape}"
        )
    grad_input = np.zeros(int(np.prod(input_shape)), dtype=grad_out.dtype)
    np.add.at(grad_input, winners.ravel(), grad_out.ravel())
    return grad_input.reshape(input_shape)


def linear_forward(x, weight, bias):
    """out[n,o] = sum_i x[n,i] * weight[o,i] + bias[o]."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ShapeError(f"linear expects 2-d input/weight, got {x.shape} / {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear inner extents disagree: input {x.shape[1]} vs weight {weight.shape[1]}"
        )
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {weight.shape[0]} outputs")
    return x @ weight.T + bias


def linear_backward(x, weight, grad_out):
    if grad_out.shape != (x.shape[0], weight.shape[0]):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match ({x.shape[0]}, {weight.shape[0]})"
        )
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    # gradient defined as exactly 0 at x == 0
    return grad_out * (x > 0)


def softmax(logits):
    """Row-wise stable softmax of (N, K) logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, classes):
    """Summed-over-the-batch cross entropy of softmaxed logits.

    Returns (loss, grad_logits) with grad row n = softmax(row n) - onehot(class n).
    Max-subtraction keeps arbitrarily large logits finite.
    """
    logits = np.asarray(logits)
    classes = np.asarray(classes)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ShapeError(f"logits must be (N, K>=2), got shape {logits.shape}")
    n, k = logits.shape
    if classes.shape != (n,):
        raise ShapeError(f"classes shape {classes.shape} does not match batch size {n}")
    if classes.size and (classes.min() < 0 or classes.max() >= k):
        raise ShapeError(f"class indices must lie in [0, {k}), got {classes}")

    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    e = np.exp(z)
    denom = e.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    log_probs = z - np.log(denom)
    loss = float(-log_probs[rows, classes].sum())
    grad = e / denom
    grad[rows, classes] -= 1
    return loss, grad
