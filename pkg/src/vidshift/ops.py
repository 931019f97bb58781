"""Differentiable array operations used by the restoration network.

Convolution is computed directly (windowed cross-correlation, no FFT).
Inputs may be (C, H, W) or batched (N, C, H, W); weights follow the
(C_out, C_in / groups, k, k) convention.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import Tensor, apply_op
from .errors import InvalidArgument


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise InvalidArgument(f"expected 3-D or 4-D feature array, got shape {x.shape}")


def _unbatch(x: np.ndarray, squeezed: bool) -> np.ndarray:
    return x[0] if squeezed else x


# ---------------------------------------------------------------------------
# convolution


def _conv_forward(x: np.ndarray, w: np.ndarray, groups: int, padding: int) -> np.ndarray:
    n, c_in, h, wd = x.shape
    c_out, c_g, k, _ = w.shape
    o_g = c_out // groups
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = h + 2 * padding - k + 1
    wo = wd + 2 * padding - k + 1
    if c_g == 1 and o_g == 1:
        # depthwise: accumulate k*k shifted tap products, no window copies
        out = np.zeros((n, c_in, ho, wo), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                out += w[None, :, 0, i, j, None, None] * x[:, :, i : i + ho, j : j + wo]
        return out
    if k == 1 and groups == 1:
        out = np.tensordot(w[:, :, 0, 0], x, axes=([1], [1]))  # (C_out, N, H, W)
        return np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    win = sliding_window_view(x, (k, k), axis=(2, 3))  # (N, C_in, Ho, Wo, k, k)
    win = win.reshape(n, groups, c_g, ho, wo, k, k)
    cols = np.ascontiguousarray(win.transpose(1, 0, 3, 4, 2, 5, 6)).reshape(
        groups, n * ho * wo, c_g * k * k
    )
    wm = w.reshape(groups, o_g, c_g * k * k).transpose(0, 2, 1)
    out = np.matmul(cols, wm)  # (groups, N*Ho*Wo, o_g)
    out = out.reshape(groups, n, ho, wo, o_g).transpose(1, 0, 4, 2, 3)
    return np.ascontiguousarray(out.reshape(n, c_out, ho, wo))


def _conv_grad_input(g: np.ndarray, w: np.ndarray, groups: int, padding: int, h: int, wd: int) -> np.ndarray:
    # full correlation with the spatially flipped, channel-transposed kernel
    c_out, c_g, k, _ = w.shape
    o_g = c_out // groups
    w2 = w.reshape(groups, o_g, c_g, k, k)[:, :, :, ::-1, ::-1]
    w2 = np.ascontiguousarray(w2.transpose(0, 2, 1, 3, 4)).reshape(groups * c_g, o_g, k, k)
    full = _conv_forward(g, w2, groups, k - 1)  # (N, C_in, H + 2p, W + 2p)
    if padding:
        full = full[:, :, padding : padding + h, padding : padding + wd]
    return np.ascontiguousarray(full)


def _conv_grad_weight(x: np.ndarray, g: np.ndarray, groups: int, padding: int, k: int) -> np.ndarray:
    n, c_in, _, _ = x.shape
    c_out = g.shape[1]
    c_g = c_in // groups
    o_g = c_out // groups
    ho, wo = g.shape[2], g.shape[3]
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    if c_g == 1 and o_g == 1:
        gw = np.empty((c_in, 1, k, k), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                gw[:, 0, i, j] = np.einsum(
                    "nchw,nchw->c", g, x[:, :, i : i + ho, j : j + wo], optimize=True
                )
        return gw
    win = sliding_window_view(x, (k, k), axis=(2, 3)).reshape(
        n, groups, c_g, ho, wo, k, k
    )
    cols = np.ascontiguousarray(win.transpose(1, 2, 5, 6, 0, 3, 4)).reshape(
        groups, c_g * k * k, n * ho * wo
    )
    gm = np.ascontiguousarray(
        g.reshape(n, groups, o_g, ho, wo).transpose(1, 0, 3, 4, 2)
    ).reshape(groups, n * ho * wo, o_g)
    gw = np.matmul(cols, gm)  # (groups, c_g*k*k, o_g)
    gw = gw.reshape(groups, c_g, k, k, o_g).transpose(0, 4, 1, 2, 3)
    return np.ascontiguousarray(gw.reshape(c_out, c_g, k, k))


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, groups: int = 1, padding: int = 0) -> Tensor:
    """Direct 2-D cross-correlation with zero padding.

    Output spatial size is H + 2*padding - k + 1 per axis. ``groups``
    splits input and output channels into independent channel groups;
    ``groups == C_in == C_out`` is a depthwise convolution.
    """
    xd, squeezed = _batched(x.data)
    wd = weight.data
    if wd.ndim != 4 or wd.shape[2] != wd.shape[3]:
        raise InvalidArgument(f"conv2d: weight must be (C_out, C_in/g, k, k), got {wd.shape}")
    n, c_in, h, w_in = xd.shape
    c_out, c_g, k, _ = wd.shape
    if padding < 0:
        raise InvalidArgument(f"conv2d: padding must be >= 0, got {padding}")
    if groups < 1 or c_in % groups or c_out % groups:
        raise InvalidArgument(
            f"conv2d: groups={groups} must divide C_in={c_in} and C_out={c_out}"
        )
    if c_g != c_in // groups:
        raise InvalidArgument(
            f"conv2d: weight expects C_in/groups={c_g}, input has {c_in // groups}"
        )
    if h + 2 * padding < k or w_in + 2 * padding < k:
        raise InvalidArgument(
            f"conv2d: kernel {k}x{k} larger than padded input {h + 2 * padding}x{w_in + 2 * padding}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise InvalidArgument(f"conv2d: bias shape {bias.shape} != ({c_out},)")

    out = _conv_forward(xd, wd, groups, padding)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bwd(g):
        g4 = g if g.ndim == 4 else g[None]
        gx = _conv_grad_input(g4, wd, groups, padding, h, w_in)
        gw = _conv_grad_weight(xd, g4, groups, padding, k)
        gb = None if bias is None else g4.sum(axis=(0, 2, 3))
        if bias is None:
            return (_unbatch(gx, squeezed), gw)
        return (_unbatch(gx, squeezed), gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_op(_unbatch(out, squeezed), inputs, bwd)


def pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """1x1 convolution mixing channels at each pixel."""
    if weight.data.ndim != 4 or weight.data.shape[2:] != (1, 1):
        raise InvalidArgument(f"pointwise_conv: weight must be (C_out, C_in, 1, 1), got {weight.shape}")
    return conv2d(x, weight, bias=bias, groups=1, padding=0)


# ---------------------------------------------------------------------------
# resampling


def avg_pool2(x: Tensor) -> Tensor:
    """Mean over non-overlapping 2x2 blocks; height and width must be even."""
    xd, squeezed = _batched(x.data)
    n, c, h, w = xd.shape
    if h % 2 or w % 2:
        raise InvalidArgument(f"avg_pool2: extents must be even, got {h}x{w}")
    out = xd.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def bwd(g):
        g4 = g if g.ndim == 4 else g[None]
        gx = np.repeat(np.repeat(g4, 2, axis=2), 2, axis=3) * 0.25
        return (_unbatch(gx.astype(xd.dtype, copy=False), squeezed),)

    return apply_op(_unbatch(out, squeezed), (x,), bwd)


def _up2_axis(x: np.ndarray, axis: int) -> np.ndarray:
    # scale-2 bilinear with half-pixel sample centers and clamped borders:
    # even outputs mix (0.25 prev, 0.75 here), odd mix (0.75 here, 0.25 next)
    x = np.moveaxis(x, axis, -1)
    prev = np.concatenate([x[..., :1], x[..., :-1]], axis=-1)
    nxt = np.concatenate([x[..., 1:], x[..., -1:]], axis=-1)
    even = 0.25 * prev + 0.75 * x
    odd = 0.75 * x + 0.25 * nxt
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],), dtype=x.dtype)
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return np.moveaxis(out, -1, axis)


def _up2_axis_grad(g: np.ndarray, axis: int) -> np.ndarray:
    g = np.moveaxis(g, axis, -1)
    ge = g[..., 0::2]
    go = g[..., 1::2]
    gx = 0.75 * (ge + go)
    gx[..., :-1] += 0.25 * ge[..., 1:]
    gx[..., 0] += 0.25 * ge[..., 0]
    gx[..., 1:] += 0.25 * go[..., :-1]
    gx[..., -1] += 0.25 * go[..., -1]
    return np.moveaxis(gx, -1, axis)


def bilinear_up2(x: Tensor) -> Tensor:
    """Scale-2 bilinear upsampling, half-pixel centers, clamped borders."""
    xd, squeezed = _batched(x.data)
    out = _up2_axis(_up2_axis(xd, 2), 3)

    def bwd(g):
        g4 = g if g.ndim == 4 else g[None]
        gx = _up2_axis_grad(_up2_axis_grad(g4, 3), 2)
        return (_unbatch(gx.astype(xd.dtype, copy=False), squeezed),)

    return apply_op(_unbatch(out, squeezed), (x,), bwd)


# ---------------------------------------------------------------------------
# normalization, gating, attention


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize across channels independently at each spatial position."""
    if eps <= 0:
        raise InvalidArgument(f"layer_norm: eps must be > 0, got {eps}")
    xd, squeezed = _batched(x.data)
    c = xd.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise InvalidArgument(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)"
        )
    mu = xd.mean(axis=1, keepdims=True)
    xc = xd - mu
    var = np.mean(xc * xc, axis=1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xc * ivar
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def bwd(g):
        g4 = g if g.ndim == 4 else g[None]
        gxhat = g4 * gamma.data[None, :, None, None]
        # d/dx of (x - mu(x)) * ivar(x), all reductions over channels
        m1 = gxhat.mean(axis=1, keepdims=True)
        m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
        gx = ivar * (gxhat - m1 - xhat * m2)
        ggamma = (g4 * xhat).sum(axis=(0, 2, 3))
        gbeta = g4.sum(axis=(0, 2, 3))
        return (_unbatch(gx.astype(xd.dtype, copy=False), squeezed), ggamma, gbeta)

    return apply_op(_unbatch(out, squeezed), (x, gamma, beta), bwd)


def simple_gate(x: Tensor) -> Tensor:
    """Split channels in half and return the elementwise product."""
    xd, squeezed = _batched(x.data)
    c = xd.shape[1]
    if c % 2:
        raise InvalidArgument(f"simple_gate: channel count must be even, got {c}")
    half = c // 2
    a, b = xd[:, :half], xd[:, half:]

    def bwd(g):
        g4 = g if g.ndim == 4 else g[None]
        gx = np.concatenate([g4 * b, g4 * a], axis=1)
        return (_unbatch(gx, squeezed),)

    return apply_op(_unbatch(a * b, squeezed), (x,), bwd)


def channel_attention(x: Tensor, weight: Tensor) -> Tensor:
    """Rescale channels by a linear map of their global averages.

    out[c] = x[c] * s[c] with s = weight @ mean_{h,w}(x), computed per
    sample. ``weight`` is (C, C).
    """
    xd, squeezed = _batched(x.data)
    n, c, h, w = xd.shape
    if weight.shape != (c, c):
        raise InvalidArgument(f"channel_attention: weight shape {weight.shape} != ({c}, {c})")
    pooled = xd.mean(axis=(2, 3))  # (N, C)
    s = pooled @ weight.data.T  # (N, C)
    out = xd * s[:, :, None, None]

    def bwd(g):
        g4 = g if g.ndim == 4 else g[None]
        q = (g4 * xd).sum(axis=(2, 3))  # (N, C)
        gx = g4 * s[:, :, None, None] + (q @ weight.data)[:, :, None, None] / (h * w)
        gw = q.T @ pooled
        return (_unbatch(gx.astype(xd.dtype, copy=False), squeezed), gw.astype(weight.dtype, copy=False))

    return apply_op(_unbatch(out, squeezed), (x, weight), bwd)


def channel_scale(x: Tensor, gain: Tensor) -> Tensor:
    """Multiply each channel by a learned scalar (per-channel gain)."""
    xd, squeezed = _batched(x.data)
    c = xd.shape[1]
    if gain.shape != (c,):
        raise InvalidArgument(f"channel_scale: gain shape {gain.shape} != ({c},)")
    out = xd * gain.data[None, :, None, None]

    def bwd(g):
        g4 = g if g.ndim == 4 else g[None]
        gx = g4 * gain.data[None, :, None, None]
        gg = (g4 * xd).sum(axis=(0, 2, 3))
        return (_unbatch(gx, squeezed), gg)

    return apply_op(_unbatch(out, squeezed), (x, gain), bwd)
