"""Depth-3 band-pass pyramid decomposition with exact reconstruction.

Each level stores the residual between a Gaussian-smoothed image and the
upsampled next-coarser image, so reconstruction is an algebraic identity.
All pieces are tape ops, making the decomposition differentiable end to end.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

# binomial 5-tap smoothing kernel (Burt-Adelson style)
_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_PAD = 2


def _reflect_indices(n: int, pad: int) -> np.ndarray:
    """Mirror indices (no edge repeat) for positions [-pad, n + pad)."""
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


def _blur_axis(x: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis]
    idx = _reflect_indices(n, _PAD)
    xp = np.take(x, idx, axis=axis)
    out = np.zeros_like(x)
    sl = [slice(None)] * x.ndim
    for k, w in enumerate(_KERNEL):
        sl[axis] = slice(k, k + n)
        out += w * xp[tuple(sl)]
    return out


def _blur_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    n = g.shape[axis]
    idx = _reflect_indices(n, _PAD)
    shape = list(g.shape)
    shape[axis] = n + 2 * _PAD
    gp = np.zeros(shape, dtype=g.dtype)
    sl = [slice(None)] * g.ndim
    for k, w in enumerate(_KERNEL):
        sl[axis] = slice(k, k + n)
        gp[tuple(sl)] += w * g
    out = np.zeros_like(g)
    np.add.at(np.moveaxis(out, axis, 0), idx, np.moveaxis(gp, axis, 0))
    return out


def blur(x: Tensor) -> Tensor:
    """Separable 5-tap binomial smoothing with mirrored borders."""
    data = _blur_axis(_blur_axis(x.data, 2), 3)

    def backward(g):
        x.accumulate_grad(_blur_axis_adjoint(_blur_axis_adjoint(g, 3), 2))

    return T._from_op(data, (x,), backward, "blur")


def downsample2(x: Tensor) -> Tensor:
    """Keep even-indexed rows and columns."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"downsample2 needs even spatial dims, got {x.shape}")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, :, ::2, ::2] = g
        x.accumulate_grad(gx)

    return T._from_op(np.ascontiguousarray(x.data[:, :, ::2, ::2]), (x,), backward,
                      "downsample2")


def _zero_insert(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    data = np.zeros((b, c, 2 * h, 2 * w), dtype=x.data.dtype)
    data[:, :, ::2, ::2] = x.data

    def backward(g):
        x.accumulate_grad(np.ascontiguousarray(g[:, :, ::2, ::2]))

    return T._from_op(data, (x,), backward, "zero_insert")


def upsample2(x: Tensor) -> Tensor:
    """Zero-insertion followed by the blur, scaled so constants stay constant."""
    return T.mul_scalar(blur(_zero_insert(x)), 4.0)


@dataclass(frozen=True)
class PyramidLevels:
    """Band-pass levels, finest first; the last level is the low-pass residual."""
    levels: tuple[Tensor, ...]

    @property
    def l1(self) -> Tensor:
        return self.levels[0]

    @property
    def l2(self) -> Tensor:
        return self.levels[1]

    @property
    def l3(self) -> Tensor:
        return self.levels[-1]

    @property
    def depth(self) -> int:
        return len(self.levels)


def decompose(image: Tensor, depth: int = 3) -> PyramidLevels:
    """Split an image into depth-1 band-pass levels plus a low-pass residual."""
    if depth < 2:
        raise ContractError(f"pyramid depth must be >= 2, got {depth}")
    _, _, h, w = image.shape
    div = 2 ** (depth - 1)
    if h % div or w % div:
        raise DimensionError(
            f"spatial dims {h}x{w} not divisible by {div}; pad the input first")
    gaussians = [image]
    for _ in range(depth - 1):
        gaussians.append(downsample2(blur(gaussians[-1])))
    levels = []
    for k in range(depth - 1):
        levels.append(gaussians[k] - upsample2(gaussians[k + 1]))
    levels.append(gaussians[-1])
    return PyramidLevels(tuple(levels))


def reconstruct(p: PyramidLevels) -> Tensor:
    """Invert ``decompose`` exactly (up to float rounding)."""
    g = p.levels[-1]
    for band in reversed(p.levels[:-1]):
        up = upsample2(g)
        if up.shape != band.shape:
            raise DimensionError(
                f"inconsistent level shapes: {band.shape} vs upsampled {up.shape}")
        g = band + up
    return g


@dataclass(frozen=True)
class CropRecord:
    """Remembers the original spatial size so padding can be undone exactly."""
    orig_h: int
    orig_w: int


def pad_to_multiple(image: Tensor, m: int) -> tuple[Tensor, CropRecord]:
    """Mirror-pad right/bottom so both spatial dims are multiples of ``m``."""
    if m < 1:
        raise ContractError(f"pad multiple must be >= 1, got {m}")
    b, c, h, w = image.shape
    nh = -(-h // m) * m
    nw = -(-w // m) * m
    rec = CropRecord(h, w)
    if nh == h and nw == w:
        return image, rec
    data = image.data
    rows = np.concatenate([np.arange(h), _mirror_tail(h, nh - h)])
    cols = np.concatenate([np.arange(w), _mirror_tail(w, nw - w)])
    padded = data[:, :, rows][:, :, :, cols]
    return Tensor(np.ascontiguousarray(padded)), rec


def _mirror_tail(n: int, extra: int) -> np.ndarray:
    if extra == 0:
        return np.arange(0)
    if n == 1:
        return np.zeros(extra, dtype=int)
    period = 2 * n - 2
    idx = np.arange(n, n + extra)
    m = np.mod(idx, period)
    return np.where(m < n, m, period - m)


def crop(image: Tensor, rec: CropRecord) -> Tensor:
    return Tensor(np.ascontiguousarray(image.data[:, :, :rec.orig_h, :rec.orig_w]))
