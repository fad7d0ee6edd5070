"""Neural-network layer primitives on top of the tensor graph.

Conventions: batched signals are ``[B, C, L]``; a 2-D ``[C, L]`` input to
``conv1d``/pooling is treated as a single-sample batch and returned without
the batch axis. Convolutions are valid (no padding) cross-correlations.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor

__all__ = [
    "linear",
    "conv1d",
    "adaptive_max_pool1d",
    "softmax",
    "logsumexp",
    "batch_norm",
    "dropout",
]


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with ``weight`` shaped [in, out]."""
    x = Tensor.lift(x)
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(
            f"linear: input dim {x.shape[-1]} != weight rows {weight.shape[0]}"
        )
    out = x @ weight
    if bias is not None:
        out = out + bias
    return out


def _conv_windows(data: np.ndarray, kernel_len: int, stride: int) -> np.ndarray:
    """Strided view [B, C, L_out, K] over the last axis."""
    b, c, length = data.shape
    l_out = (length - kernel_len) // stride + 1
    sb, sc, sl = data.strides
    return np.lib.stride_tricks.as_strided(
        data,
        shape=(b, c, l_out, kernel_len),
        strides=(sb, sc, sl * stride, sl),
        writeable=False,
    )


def conv1d(
    x: Tensor,
    kernels: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    groups: int = 1,
) -> Tensor:
    """Grouped valid 1-D cross-correlation.

    Args:
        x: [B, C_in, L] or [C_in, L].
        kernels: [C_out, C_in // groups, K].
        bias: optional [C_out].
        stride: positive step between windows.
        groups: channel groups; C_in and C_out must both be divisible.

    Returns:
        [B, C_out, L_out] with L_out = (L - K) // stride + 1.
    """
    x = Tensor.lift(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3 or kernels.ndim != 3:
        raise ShapeError("conv1d expects [B, C, L] input and [C_out, C_in/g, K] kernels")
    b, c_in, length = x.shape
    c_out, c_in_g, k = kernels.shape
    if k > length:
        raise ShapeError(f"kernel length {k} exceeds signal length {length}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if c_in % groups or c_out % groups or c_in_g != c_in // groups:
        raise ShapeError(
            f"conv1d: {c_in} input / {c_out} output channels not divisible "
            f"into {groups} groups of width {c_in_g}"
        )

    l_out = (length - k) // stride + 1
    depthwise = groups == c_in and c_out == c_in and stride == 1
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    if depthwise and k >= 16 and l_out >= 32:
        # Long per-channel filters: cross-correlation via FFT products.
        # With transform length L the circular products equal the linear
        # valid correlation / full convolution exactly.
        w2 = kernels.data[:, 0, :]
        fx = np.fft.rfft(x.data, n=length, axis=-1)
        fw = np.conj(np.fft.rfft(w2, n=length, axis=-1))
        out_data = np.fft.irfft(fx * fw[None], n=length, axis=-1)[..., :l_out]
        out_data = np.ascontiguousarray(out_data)
        if bias is not None:
            out_data += bias.data[None, :, None]

        def backward(g):
            fg = np.fft.rfft(g, n=length, axis=-1)
            if kernels.requires_grad:
                gk = np.fft.irfft((fx * np.conj(fg)).sum(axis=0), n=length, axis=-1)
                kernels._accumulate(np.ascontiguousarray(gk[:, :k])[:, None, :])
            if x.requires_grad:
                gx = np.fft.irfft(fg * np.conj(fw)[None], n=length, axis=-1)
                x._accumulate(gx)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2)))

    elif depthwise:
        # One filter per channel, stride 1: accumulate K shifted
        # multiply-adds instead of materializing the window tensor.
        w2 = kernels.data[:, 0, :]  # [C, K]
        out_data = np.zeros((b, c_in, l_out))
        for t in range(k):
            out_data += x.data[:, :, t : t + l_out] * w2[None, :, t, None]
        if bias is not None:
            out_data += bias.data[None, :, None]

        def backward(g):
            if kernels.requires_grad:
                gk = np.empty((c_in, k))
                for t in range(k):
                    gk[:, t] = (x.data[:, :, t : t + l_out] * g).sum(axis=(0, 2))
                kernels._accumulate(gk[:, None, :])
            if x.requires_grad:
                gx = np.zeros((b, c_in, length))
                for t in range(k):
                    gx[:, :, t : t + l_out] += w2[None, :, t, None] * g
                x._accumulate(gx)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2)))

    else:
        windows = _conv_windows(x.data, k, stride)  # [B, C_in, L_out, K]
        win_g = windows.reshape(b, groups, c_in_g, l_out, k)
        ker_g = kernels.data.reshape(groups, c_out // groups, c_in_g, k)
        out_data = np.einsum("bgilk,goik->bgol", win_g, ker_g, optimize=True)
        out_data = out_data.reshape(b, c_out, l_out)
        if bias is not None:
            out_data = out_data + bias.data[None, :, None]

        def backward(g):
            g3 = g.reshape(b, groups, c_out // groups, l_out)
            if kernels.requires_grad:
                gk = np.einsum("bgilk,bgol->goik", win_g, g3, optimize=True)
                kernels._accumulate(gk.reshape(c_out, c_in_g, k))
            if x.requires_grad:
                gw = np.einsum("goik,bgol->bgilk", ker_g, g3, optimize=True)
                gw = gw.reshape(b, c_in, l_out, k)
                gx = np.zeros((b, c_in, length))
                for t in range(k):
                    gx[:, :, t : t + l_out * stride : stride] += gw[:, :, :, t]
                x._accumulate(gx)
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2)))

    out = Tensor._from_op(out_data, parents, backward, "conv1d")
    return out.reshape(c_out, l_out) if squeeze else out


_POOL_BIN_CACHE: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _pool_bins(length: int, out_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Gather indices [out, max_width] plus a validity mask for the bins
    [floor(i*L/out), ceil((i+1)*L/out))."""
    key = (length, out_len)
    cached = _POOL_BIN_CACHE.get(key)
    if cached is not None:
        return cached
    starts = (np.arange(out_len) * length) // out_len
    ends = -(-(np.arange(1, out_len + 1) * length) // out_len)  # ceil division
    widths = ends - starts
    max_w = int(widths.max())
    offsets = np.arange(max_w)
    idx = starts[:, None] + np.minimum(offsets[None, :], widths[:, None] - 1)
    valid = offsets[None, :] < widths[:, None]
    _POOL_BIN_CACHE[key] = (idx, valid)
    return idx, valid


def adaptive_max_pool1d(x: Tensor, out_len: int) -> Tensor:
    """Max-pool the last axis down to ``out_len`` bins.

    Bin i covers [floor(i*L/out), ceil((i+1)*L/out)); ties inside a bin route
    gradient to the lowest index.
    """
    x = Tensor.lift(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    b, c, length = x.shape
    if out_len < 1 or out_len > length:
        raise ShapeError(f"cannot pool length {length} to {out_len} bins")

    idx, valid = _pool_bins(length, out_len)
    gathered = x.data[:, :, idx]  # [B, C, out, max_w]
    gathered = np.where(valid[None, None], gathered, -np.inf)
    local = np.argmax(gathered, axis=-1)
    arg = idx[np.arange(out_len)[None, None, :], local]  # absolute indices
    out_data = np.take_along_axis(x.data, arg.reshape(b, c, out_len), axis=-1)

    def backward(g):
        if not x.requires_grad:
            return
        grad = np.zeros((b, c, length))
        bi, ci = np.ogrid[:b, :c]
        np.add.at(grad, (bi[..., None], ci[..., None], arg), g)
        x._accumulate(grad)

    out = Tensor._from_op(out_data, (x,), backward, "adaptive_max_pool1d")
    return out.reshape(c, out_len) if squeeze else out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Normalized exponentials along ``axis``; rows sum to 1."""
    x = Tensor.lift(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            x._accumulate(out_data * (g - inner))

    return Tensor._from_op(out_data, (x,), backward, "softmax")


def logsumexp(x: Tensor, axis: int = -1) -> Tensor:
    """log(sum(exp(x))) along ``axis``, stabilized by max subtraction."""
    x = Tensor.lift(x)
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    out_data = np.squeeze(m + np.log(s), axis=axis)
    soft = e / s

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.expand_dims(g, axis) * soft)

    return Tensor._from_op(out_data, (x,), backward, "logsumexp")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.9,
    eps: float = 1e-5,
):
    """Per-channel batch normalization over the batch and time axes.

    Args:
        x: [B, C, L].
        gamma, beta: [C] scale and shift.
        running_mean, running_var: [C] running estimates (plain arrays).
        training: use batch statistics and emit updated running estimates;
            otherwise normalize with the running estimates.
        momentum: weight kept by the running estimate per update
            (running = momentum * running + (1 - momentum) * batch).

    Returns:
        (y, new_running_mean, new_running_var). The inputs are not mutated.
    """
    x = Tensor.lift(x)
    if x.ndim != 3:
        raise ShapeError("batch_norm expects [B, C, L]")
    b, c, length = x.shape
    n = b * length

    if training:
        mean = x.data.mean(axis=(0, 2))
        var = x.data.var(axis=(0, 2))  # biased, used for normalization
        unbiased = var * n / max(n - 1, 1)
        new_mean = momentum * running_mean + (1.0 - momentum) * mean
        new_var = momentum * running_var + (1.0 - momentum) * unbiased
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean[None, :, None]) * inv_std[None, :, None]
    out_data = gamma.data[None, :, None] * x_hat + beta.data[None, :, None]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * x_hat).sum(axis=(0, 2)))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            scale = (gamma.data * inv_std)[None, :, None]
            if training:
                g_mean = g.mean(axis=(0, 2), keepdims=True)
                gx_hat_mean = (g * x_hat).mean(axis=(0, 2), keepdims=True)
                x._accumulate(scale * (g - g_mean - x_hat * gx_hat_mean))
            else:
                x._accumulate(scale * g)

    out = Tensor._from_op(out_data, (x, gamma, beta), backward, "batch_norm")
    return out, new_mean, new_var


def dropout(x: Tensor, keep_prob: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout driven by an explicit RNG stream.

    Identity when ``training`` is false. In training mode each element is
    kept with probability ``keep_prob`` and scaled by ``1/keep_prob``.
    """
    x = Tensor.lift(x)
    if not training or keep_prob >= 1.0:
        return x
    if not 0.0 < keep_prob <= 1.0:
        raise ConfigError(f"keep_prob must be in (0, 1], got {keep_prob}")
    if rng is None:
        raise ConfigError("dropout in training mode requires an explicit RNG")
    mask = (rng.random(x.shape) < keep_prob) / keep_prob

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return Tensor._from_op(x.data * mask, (x,), backward, "dropout")
