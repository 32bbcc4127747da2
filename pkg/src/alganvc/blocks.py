"""Network building blocks: activations, gating, normalization, convolutions.

Convolutions use same-style padding: output spatial size is ceil(size/stride),
with the total pad split left-light / right-heavy.  The im2col forward keeps
the patch matrix alive in the backward closure so the weight gradient is a
single GEMM; the input gradient scatters back through a cached index map.

The five activations used by the adaptive adversarial loss live here in a
fixed enumeration order; that order is part of the loss contract (ties in
the branch minimum resolve to the earliest member).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

ELU_ALPHA = 1.0
SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772
LRELU_SLOPE = 0.2
INSTANCE_NORM_EPS = 1e-5


class ActivationKind(enum.Enum):
    RELU = "relu"
    ELU = "elu"
    SELU = "selu"
    LRELU = "lrelu"
    SIGMOID = "sigmoid"


# Enumeration order of the adaptive loss branches.  Do not reorder.
ACTIVATION_ORDER = (
    ActivationKind.RELU,
    ActivationKind.ELU,
    ActivationKind.SELU,
    ActivationKind.LRELU,
    ActivationKind.SIGMOID,
)


def relu(x: Tensor) -> Tensor:
    def bw(out):
        mask = x.data > 0  # derivative 0 at the kink

        def run():
            x.accumulate_grad(out.grad * mask)
        return run

    return x._make(np.maximum(x.data, 0.0), (x,), bw)


def elu(x: Tensor) -> Tensor:
    xd = x.data
    neg = xd <= 0
    expm1 = np.where(neg, np.expm1(np.minimum(xd, 0.0)), 0.0)
    data = np.where(neg, ELU_ALPHA * expm1, xd)

    def bw(out):
        deriv = np.where(neg, ELU_ALPHA * (expm1 + 1.0), 1.0)

        def run():
            x.accumulate_grad(out.grad * deriv)
        return run

    return x._make(data, (x,), bw)


def selu(x: Tensor) -> Tensor:
    xd = x.data
    neg = xd <= 0
    expx = np.where(neg, np.exp(np.minimum(xd, 0.0)), 1.0)
    data = SELU_LAMBDA * np.where(neg, SELU_ALPHA * (expx - 1.0), xd)

    def bw(out):
        deriv = SELU_LAMBDA * np.where(neg, SELU_ALPHA * expx, 1.0)

        def run():
            x.accumulate_grad(out.grad * deriv)
        return run

    return x._make(data, (x,), bw)


def leaky_relu(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd > 0
    data = np.where(pos, xd, LRELU_SLOPE * xd)

    def bw(out):
        deriv = np.where(pos, 1.0, LRELU_SLOPE)

        def run():
            x.accumulate_grad(out.grad * deriv)
        return run

    return x._make(data, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd >= 0
    data = np.empty_like(xd)
    data[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    data[~pos] = ex / (1.0 + ex)

    def bw(out):
        s = data

        def run():
            x.accumulate_grad(out.grad * (s * (1.0 - s)))
        return run

    return x._make(data, (x,), bw)


_ACTIVATION_FN = {
    ActivationKind.RELU: relu,
    ActivationKind.ELU: elu,
    ActivationKind.SELU: selu,
    ActivationKind.LRELU: leaky_relu,
    ActivationKind.SIGMOID: sigmoid,
}


def apply_activation(kind: ActivationKind, x: Tensor) -> Tensor:
    return _ACTIVATION_FN[kind](x)


def glu(x: Tensor) -> Tensor:
    """Gated linear unit over the channel axis (axis 0): A * sigmoid(B).

    The input must have an even channel count; the first half carries the
    values, the second half the gates.
    """
    c = x.shape[0]
    if c % 2 != 0:
        raise ValueError(f"glu needs an even channel count, got {c}")
    half = c // 2
    a = x.narrow(0, 0, half)
    b = x.narrow(0, half, half)
    return a * sigmoid(b)


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = INSTANCE_NORM_EPS) -> Tensor:
    """Per-channel standardization over the spatial axes, then affine.

    `x` is (C, *spatial) with at least one spatial axis; `gamma` and `beta`
    are (C,).  Variance is the population variance.  Batch size is always 1
    here, so instance and batch statistics coincide per channel.
    """
    if x.ndim < 2:
        raise ValueError("instance_norm needs a channel axis plus spatial axes")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"affine parameters must have shape ({c},)")
    axes = tuple(range(1, x.ndim))
    xd = x.data
    mu = xd.mean(axis=axes, keepdims=True)
    var = xd.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    gshape = (c,) + (1,) * (x.ndim - 1)
    gd = gamma.data.reshape(gshape)
    data = gd * xhat + beta.data.reshape(gshape)

    def bw(out):
        def run():
            g = out.grad
            if gamma.requires_grad:
                gamma.accumulate_grad((g * xhat).sum(axis=axes))
            if beta.requires_grad:
                beta.accumulate_grad(g.sum(axis=axes))
            if x.requires_grad:
                dxhat = g * gd
                mean_dxhat = dxhat.mean(axis=axes, keepdims=True)
                mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes, keepdims=True)
                x.accumulate_grad(inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat))
        return run

    return x._make(data, (x, gamma, beta), bw)


def pixel_shuffle_1d(x: Tensor, factor: int) -> Tensor:
    """Trade channels for width: (C*r, W) -> (C, W*r).

    out[c][w*r + j] = in[c*r + j][w], so each output channel interleaves a
    block of r input channels.
    """
    if factor < 1:
        raise ValueError("shuffle factor must be a positive integer")
    cr, w = x.shape
    if cr % factor != 0:
        raise ValueError(f"channel count {cr} not divisible by shuffle factor {factor}")
    c = cr // factor
    return x.reshape(c, factor, w).transpose(0, 2, 1).reshape(c, w * factor)


def same_pad(size: int, kernel: int, stride: int) -> tuple:
    """(left, right, out_size) so out_size = ceil(size / stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    left = total // 2
    return left, total - left, out


_COL_INDEX_CACHE: dict = {}


def _col2im_index_1d(c: int, wp: int, k: int, stride: int, w_out: int) -> np.ndarray:
    key = ("1d", c, wp, k, stride, w_out)
    idx = _COL_INDEX_CACHE.get(key)
    if idx is None:
        chan = np.arange(c)[:, None, None] * wp
        tap = np.arange(k)[None, :, None]
        col = np.arange(w_out)[None, None, :] * stride
        idx = (chan + tap + col).ravel()
        _COL_INDEX_CACHE[key] = idx
    return idx


def conv1d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1) -> Tensor:
    """Cross-correlation along width with same-style padding.

    `x` is (C_in, W), `weight` is (C_out, C_in, k), `bias` is (C_out,) or
    None.  Output is (C_out, ceil(W / stride)).
    """
    c_in, w = x.shape
    c_out, c_in_w, k = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"input has {c_in} channels, weight expects {c_in_w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    left, right, w_out = same_pad(w, k, stride)
    xp = np.pad(x.data, ((0, 0), (left, right)))
    cols = sliding_window_view(xp, k, axis=1)[:, ::stride, :]
    cols = np.ascontiguousarray(cols.transpose(0, 2, 1)).reshape(c_in * k, w_out)
    data = weight.data.reshape(c_out, -1) @ cols
    if bias is not None:
        data = data + bias.data[:, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(out):
        wp = w + left + right

        def run():
            g = out.grad
            if weight.requires_grad:
                weight.accumulate_grad((g @ cols.T).reshape(weight.shape))
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=1))
            if x.requires_grad:
                dcols = weight.data.reshape(c_out, -1).T @ g
                idx = _col2im_index_1d(c_in, wp, k, stride, w_out)
                flat = np.bincount(idx, weights=dcols.ravel(), minlength=c_in * wp)
                dx = flat.reshape(c_in, wp)[:, left:left + w]
                x.accumulate_grad(dx.astype(x.data.dtype, copy=False))
        return run

    return x._make(data, parents, bw)


def _col2im_index_2d(c, hp, wp, kh, kw, sh, sw, h_out, w_out) -> np.ndarray:
    key = ("2d", c, hp, wp, kh, kw, sh, sw)
    idx = _COL_INDEX_CACHE.get(key)
    if idx is None:
        chan = np.arange(c).reshape(-1, 1, 1, 1, 1) * (hp * wp)
        th = np.arange(kh).reshape(1, -1, 1, 1, 1) * wp
        tw = np.arange(kw).reshape(1, 1, -1, 1, 1)
        oh = np.arange(h_out).reshape(1, 1, 1, -1, 1) * (sh * wp)
        ow = np.arange(w_out).reshape(1, 1, 1, 1, -1) * sw
        idx = (chan + th + tw + oh + ow).ravel()
        _COL_INDEX_CACHE[key] = idx
    return idx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: tuple = (1, 1)) -> Tensor:
    """2-D cross-correlation with same-style padding on both spatial axes.

    `x` is (C_in, H, W), `weight` is (C_out, C_in, kh, kw).  Output is
    (C_out, ceil(H / sh), ceil(W / sw)).
    """
    c_in, h, w = x.shape
    c_out, c_in_w, kh, kw = weight.shape
    if c_in != c_in_w:
        raise ValueError(f"input has {c_in} channels, weight expects {c_in_w}")
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ValueError("stride must be >= 1")
    top, bottom, h_out = same_pad(h, kh, sh)
    left, right, w_out = same_pad(w, kw, sw)
    xp = np.pad(x.data, ((0, 0), (top, bottom), (left, right)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw, :, :]
    # (C, H_out, W_out, kh, kw) -> (C, kh, kw, H_out, W_out) -> matrix
    cols = np.ascontiguousarray(win.transpose(0, 3, 4, 1, 2)).reshape(
        c_in * kh * kw, h_out * w_out
    )
    data = (weight.data.reshape(c_out, -1) @ cols).reshape(c_out, h_out, w_out)
    if bias is not None:
        data = data + bias.data[:, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(out):
        hp, wp = h + top + bottom, w + left + right

        def run():
            g = out.grad.reshape(c_out, -1)
            if weight.requires_grad:
                weight.accumulate_grad((g @ cols.T).reshape(weight.shape))
            if bias is not None and bias.requires_grad:
                bias.accumulate_grad(g.sum(axis=1))
            if x.requires_grad:
                dcols = weight.data.reshape(c_out, -1).T @ g
                idx = _col2im_index_2d(c_in, hp, wp, kh, kw, sh, sw, h_out, w_out)
                flat = np.bincount(idx, weights=dcols.ravel(), minlength=c_in * hp * wp)
                dx = flat.reshape(c_in, hp, wp)[:, top:top + h, left:left + w]
                x.accumulate_grad(dx.astype(x.data.dtype, copy=False))
        return run

    return x._make(data, parents, bw)


# -- layers ----------------------------------------------------------------


@dataclass(frozen=True)
class ConvSpec:
    """Static description of one convolution: channels, kernel, stride.

    `kernel` and `stride` are ints for width-only convolutions and (h, w)
    pairs for 2-D ones.
    """

    in_channels: int
    out_channels: int
    kernel: object
    stride: object = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")


WEIGHT_INIT_STD = 0.02


def _init_weight(rng: np.random.Generator, shape, std: float, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, std, shape).astype(dtype), requires_grad=True)


def _init_bias(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


class Conv1dLayer:
    def __init__(self, spec: ConvSpec, rng: np.random.Generator,
                 std: float = WEIGHT_INIT_STD, dtype=np.float64):
        self.spec = spec
        k = int(spec.kernel)
        self.weight = _init_weight(rng, (spec.out_channels, spec.in_channels, k), std, dtype)
        self.bias = _init_bias((spec.out_channels,), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias, stride=int(self.spec.stride))

    def params(self) -> list:
        return [self.weight, self.bias]


class Conv2dLayer:
    def __init__(self, spec: ConvSpec, rng: np.random.Generator,
                 std: float = WEIGHT_INIT_STD, dtype=np.float64):
        self.spec = spec
        kh, kw = spec.kernel
        self.weight = _init_weight(rng, (spec.out_channels, spec.in_channels, kh, kw), std, dtype)
        self.bias = _init_bias((spec.out_channels,), dtype)

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=tuple(self.spec.stride))

    def params(self) -> list:
        return [self.weight, self.bias]


class InstanceNorm:
    """Affine instance normalization; gamma starts at 1, beta at 0."""

    def __init__(self, channels: int, dtype=np.float64, eps: float = INSTANCE_NORM_EPS):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return instance_norm(x, self.gamma, self.beta, eps=self.eps)

    def params(self) -> list:
        return [self.gamma, self.beta]


class GatedConv1d:
    """conv -> GLU.  The convolution emits 2x the nominal output channels."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, rng, std: float = WEIGHT_INIT_STD, dtype=np.float64):
        self.conv = Conv1dLayer(
            ConvSpec(in_channels, 2 * out_channels, kernel, stride), rng, std, dtype
        )
        self.out_channels = out_channels

    def forward(self, x: Tensor) -> Tensor:
        return glu(self.conv.forward(x))

    def params(self) -> list:
        return self.conv.params()


class GatedConvNorm1d:
    """Downsampling unit: conv -> GLU -> instance norm, in that order."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int, rng, std: float = WEIGHT_INIT_STD, dtype=np.float64):
        self.gated = GatedConv1d(in_channels, out_channels, kernel, stride, rng, std, dtype)
        self.norm = InstanceNorm(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm.forward(self.gated.forward(x))

    def params(self) -> list:
        return self.gated.params() + self.norm.params()


class UpsampleBlock1d:
    """Upsampling unit: conv -> GLU -> pixel shuffle -> instance norm.

    The convolution runs at stride 1 and emits 2 * factor * out_channels
    raw channels; GLU halves that, the shuffle trades the factor for width.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 rng, factor: int = 2, std: float = WEIGHT_INIT_STD, dtype=np.float64):
        self.factor = factor
        self.gated = GatedConv1d(in_channels, out_channels * factor, kernel, 1, rng, std, dtype)
        self.norm = InstanceNorm(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm.forward(pixel_shuffle_1d(self.gated.forward(x), self.factor))

    def params(self) -> list:
        return self.gated.params() + self.norm.params()


class GatedConv2d:
    """2-D conv -> GLU, no normalization (discriminator input blocks)."""

    def __init__(self, in_channels: int, out_channels: int, kernel: tuple,
                 stride: tuple, rng, std: float = WEIGHT_INIT_STD, dtype=np.float64):
        self.conv = Conv2dLayer(
            ConvSpec(in_channels, 2 * out_channels, kernel, stride), rng, std, dtype
        )

    def forward(self, x: Tensor) -> Tensor:
        return glu(self.conv.forward(x))

    def params(self) -> list:
        return self.conv.params()


class GatedConvNorm2d:
    """2-D downsampling unit: conv -> GLU -> instance norm."""

    def __init__(self, in_channels: int, out_channels: int, kernel: tuple,
                 stride: tuple, rng, std: float = WEIGHT_INIT_STD, dtype=np.float64):
        self.conv = Conv2dLayer(
            ConvSpec(in_channels, 2 * out_channels, kernel, stride), rng, std, dtype
        )
        self.norm = InstanceNorm(out_channels, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm.forward(glu(self.conv.forward(x)))

    def params(self) -> list:
        return self.conv.params() + self.norm.params()
