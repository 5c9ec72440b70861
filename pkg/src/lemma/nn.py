"""Differentiable layers: conv2d, 2x transposed conv, instance norm, leaky ReLU,
and the conv-activation-conv residual block they compose into."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor

LEAKY_SLOPE = 0.01


@dataclass
class Conv2dParams:
    weight: Tensor  # (out_ch, in_ch, kh, kw)
    bias: Tensor    # (1, out_ch, 1, 1)
    stride: int = 1
    padding: int = 1

    @property
    def out_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weight.shape[1]


@dataclass
class TransposeConv2dParams:
    weight: Tensor  # (in_ch, out_ch, 2, 2)
    bias: Tensor    # (1, out_ch, 1, 1)

    @property
    def in_ch(self) -> int:
        return self.weight.shape[0]

    @property
    def out_ch(self) -> int:
        return self.weight.shape[1]


@dataclass
class InstanceNormParams:
    gamma: Tensor  # (1, ch, 1, 1)
    beta: Tensor   # (1, ch, 1, 1)
    epsilon: float = 1e-5


@dataclass
class ResidualBlockParams:
    conv1: Conv2dParams
    conv2: Conv2dParams


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    b, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                      # (b, c, oh, ow, kh, kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(dcols: np.ndarray, xshape, kh: int, kw: int, stride: int, pad: int,
            oh: int, ow: int) -> np.ndarray:
    b, c, h, w = xshape
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=dcols.dtype)
    d = dcols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += d[:, :, i, j]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


def conv2d(x: Tensor, p: Conv2dParams) -> Tensor:
    """Cross-correlation with bias; zero padding."""
    out_ch, in_ch, kh, kw = p.weight.shape
    if x.shape[1] != in_ch:
        raise ShapeError(f"conv2d expects {in_ch} input channels, got shape {x.shape}")
    b = x.shape[0]
    cols, oh, ow = _im2col(x.data, kh, kw, p.stride, p.padding)
    wmat = p.weight.data.reshape(out_ch, in_ch * kh * kw)
    out = cols @ wmat.T
    out = out.reshape(b, oh, ow, out_ch).transpose(0, 3, 1, 2)
    out = out + p.bias.data

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(b * oh * ow, out_ch)
        p.weight.accumulate_grad((gmat.T @ cols).reshape(p.weight.shape))
        p.bias.accumulate_grad(g.sum(axis=(0, 2, 3)).reshape(p.bias.shape))
        dcols = gmat @ wmat
        x.accumulate_grad(_col2im(dcols, x.shape, kh, kw, p.stride, p.padding, oh, ow))

    return T._from_op(np.ascontiguousarray(out), (x, p.weight, p.bias), backward, "conv2d")


def transpose_conv2d(x: Tensor, p: TransposeConv2dParams) -> Tensor:
    """Stride-2 kernel-2 transposed convolution: exact 2x spatial upsampling."""
    in_ch, out_ch, kh, kw = p.weight.shape
    if x.shape[1] != in_ch:
        raise ShapeError(
            f"transpose_conv2d expects {in_ch} input channels, got shape {x.shape}")
    b, _, h, w = x.shape
    # out[b,o,2i+a,2j+c] = sum_k x[b,k,i,j] * w[k,o,a,c]
    out = np.einsum("bkhw,koac->bohawc", x.data, p.weight.data, optimize=True)
    out = out.reshape(b, out_ch, 2 * h, 2 * w) + p.bias.data

    def backward(g):
        gr = g.reshape(b, out_ch, h, 2, w, 2)
        x.accumulate_grad(np.einsum("bohawc,koac->bkhw", gr, p.weight.data, optimize=True))
        p.weight.accumulate_grad(
            np.einsum("bkhw,bohawc->koac", x.data, gr, optimize=True))
        p.bias.accumulate_grad(g.sum(axis=(0, 2, 3)).reshape(p.bias.shape))

    return T._from_op(np.ascontiguousarray(out), (x, p.weight, p.bias), backward,
                      "transpose_conv2d")


def instance_norm(x: Tensor, p: InstanceNormParams) -> Tensor:
    """Normalize each (batch, channel) plane to zero mean / unit variance."""
    if x.shape[1] != p.gamma.shape[1]:
        raise ShapeError(
            f"instance_norm expects {p.gamma.shape[1]} channels, got shape {x.shape}")
    n = x.shape[2] * x.shape[3]
    mean = x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    var = x.data.astype(np.float64).var(axis=(2, 3), keepdims=True)
    inv = (1.0 / np.sqrt(var + p.epsilon)).astype(x.data.dtype)
    xhat = (x.data - mean.astype(x.data.dtype)) * inv
    out = p.gamma.data * xhat + p.beta.data

    def backward(g):
        dxhat = g * p.gamma.data
        # standard normalization backward, fused over each plane
        dx = inv / n * (n * dxhat
                        - dxhat.sum(axis=(2, 3), keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=(2, 3), keepdims=True))
        x.accumulate_grad(dx.astype(x.data.dtype))
        p.gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)).reshape(p.gamma.shape))
        p.beta.accumulate_grad(g.sum(axis=(0, 2, 3)).reshape(p.beta.shape))

    return T._from_op(out, (x, p.gamma, p.beta), backward, "instance_norm")


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    """y = x for x >= 0 else slope * x; derivative at 0 takes the positive branch."""
    mask = x.data >= 0

    def backward(g):
        x.accumulate_grad(np.where(mask, g, g * x.data.dtype.type(slope)))

    return T._from_op(np.where(mask, x.data, x.data * x.data.dtype.type(slope)),
                      (x,), backward, "leaky_relu")


def residual_block(x: Tensor, p: ResidualBlockParams) -> Tensor:
    """x + conv2(leaky_relu(conv1(x))); shape preserving."""
    return T.add(x, conv2d(leaky_relu(conv2d(x, p.conv1)), p.conv2))


# ---------------------------------------------------------------------------
# initialization

def init_conv(rng: np.random.Generator, out_ch: int, in_ch: int, k: int,
              stride: int = 1, padding: int = 1) -> Conv2dParams:
    fan_in = in_ch * k * k
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k)).astype(np.float32)
    return Conv2dParams(
        weight=Tensor(w, requires_grad=True),
        bias=Tensor(np.zeros((1, out_ch, 1, 1), dtype=np.float32), requires_grad=True),
        stride=stride, padding=padding)


def init_transpose_conv(rng: np.random.Generator, in_ch: int,
                        out_ch: int) -> TransposeConv2dParams:
    fan_in = in_ch * 4
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(in_ch, out_ch, 2, 2)).astype(np.float32)
    return TransposeConv2dParams(
        weight=Tensor(w, requires_grad=True),
        bias=Tensor(np.zeros((1, out_ch, 1, 1), dtype=np.float32), requires_grad=True))


def init_instance_norm(channels: int) -> InstanceNormParams:
    return InstanceNormParams(
        gamma=Tensor(np.ones((1, channels, 1, 1), dtype=np.float32), requires_grad=True),
        beta=Tensor(np.zeros((1, channels, 1, 1), dtype=np.float32), requires_grad=True))


def init_residual_block(rng: np.random.Generator, channels: int) -> ResidualBlockParams:
    return ResidualBlockParams(conv1=init_conv(rng, channels, channels, 3),
                               conv2=init_conv(rng, channels, channels, 3))
