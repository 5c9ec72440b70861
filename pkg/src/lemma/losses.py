"""Segmentation losses: focal, soft dice, and their cross-entropy mix.

Targets are integer class maps of shape (B, H, W); the reserved label
``ignore_index`` (default 255) is excluded from every mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, LabelError, ShapeError
from .tensor import Tensor

IGNORE_INDEX = 255
_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    kind: str = "focal"            # focal | dice | ce_dice
    gamma: float = 2.0             # focal modulation exponent
    alpha: tuple | None = None     # optional per-class focal weights
    smooth: float = 1.0            # dice smoothing constant
    mix: float = 0.5               # cross-entropy share of ce_dice
    ignore_index: int = IGNORE_INDEX

    def validate(self, nc: int) -> None:
        if self.kind not in ("focal", "dice", "ce_dice"):
            raise ContractError(f"unknown loss kind {self.kind!r}")
        if self.gamma < 0:
            raise ContractError(f"focal gamma must be >= 0, got {self.gamma}")
        if self.alpha is not None:
            if len(self.alpha) != nc or any(a <= 0 for a in self.alpha):
                raise ContractError("focal alpha must be positive, length nc")


def softmax_channels(scores: Tensor) -> Tensor:
    """Per-pixel channel softmax with max-subtraction for stability."""
    if scores.shape[1] < 2:
        raise ShapeError(f"softmax needs >= 2 channels, got shape {scores.shape}")
    z = scores.data - scores.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        scores.accumulate_grad(y * (g - (g * y).sum(axis=1, keepdims=True)))

    return T._from_op(y, (scores,), backward, "softmax_channels")


def _validate_target(target: np.ndarray, scores: Tensor, ignore_index: int) -> np.ndarray:
    target = np.asarray(target)
    b, nc, h, w = scores.shape
    if target.shape != (b, h, w):
        raise ShapeError(f"target shape {target.shape} does not match scores {scores.shape}")
    bad = (target < 0) | ((target >= nc) & (target != ignore_index))
    if bad.any():
        pos = np.argwhere(bad)[0]
        raise LabelError(f"class index {int(target[tuple(pos)])} at {tuple(pos)} "
                         f"outside [0, {nc}) (ignore={ignore_index})")
    return target


def _valid_and_onehot(target: np.ndarray, nc: int, ignore_index: int, dtype):
    valid = (target != ignore_index)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ContractError("no valid pixels in target")
    safe = np.where(valid, target, 0)
    onehot = np.zeros((target.shape[0], nc) + target.shape[1:], dtype=dtype)
    np.put_along_axis(onehot, safe[:, None], 1.0, axis=1)
    onehot *= valid[:, None]
    return valid, onehot, n_valid


def focal_loss(scores: Tensor, target: np.ndarray, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean of -alpha_t * (1 - p_t)^gamma * log(p_t) over valid pixels."""
    nc = scores.shape[1]
    cfg.validate(nc)
    target = _validate_target(target, scores, cfg.ignore_index)
    valid, onehot, n_valid = _valid_and_onehot(target, nc, cfg.ignore_index,
                                               scores.data.dtype)
    p = softmax_channels(scores)
    pt = T.sum_channels(T.mul_const(p, onehot))          # (B,1,H,W)
    one_minus = T.add_scalar(T.mul_scalar(pt, -1.0), 1.0)
    term = T.mul(T.pow_scalar(one_minus, cfg.gamma), T.log(pt, floor=_LOG_FLOOR))
    weight = valid.astype(scores.data.dtype) / n_valid
    if cfg.alpha is not None:
        alpha = np.asarray(cfg.alpha, dtype=scores.data.dtype)
        weight = weight * alpha[np.where(valid, target, 0)]
    return T.mul_scalar(T.sum_weighted(term, weight[:, None]), -1.0)


def cross_entropy(scores: Tensor, target: np.ndarray,
                  cfg: LossConfig = LossConfig()) -> Tensor:
    """Plain mean cross-entropy (focal with gamma 0 and no class weights)."""
    plain = LossConfig(kind="focal", gamma=0.0, alpha=None, smooth=cfg.smooth,
                       mix=cfg.mix, ignore_index=cfg.ignore_index)
    return focal_loss(scores, target, plain)


def dice_loss(scores: Tensor, target: np.ndarray, cfg: LossConfig = LossConfig()) -> Tensor:
    """1 - mean over classes of the smoothed soft-dice overlap."""
    nc = scores.shape[1]
    cfg.validate(nc)
    target = _validate_target(target, scores, cfg.ignore_index)
    valid, onehot, _ = _valid_and_onehot(target, nc, cfg.ignore_index, scores.data.dtype)
    p = softmax_channels(scores)
    vmask = valid[:, None].astype(scores.data.dtype)
    acc = None
    for c in range(nc):
        pc = T.slice_channels(p, c, c + 1)
        yc = np.ascontiguousarray(onehot[:, c:c + 1])
        inter = T.sum_weighted(pc, yc)
        psum = T.sum_weighted(pc, vmask)
        ysum = float(yc.sum())
        num = T.add_scalar(T.mul_scalar(inter, 2.0), cfg.smooth)
        den = T.add_scalar(psum, ysum + cfg.smooth)
        ratio = T.div(num, den)
        acc = ratio if acc is None else T.add(acc, ratio)
    return T.add_scalar(T.mul_scalar(acc, -1.0 / nc), 1.0)


def ce_dice_loss(scores: Tensor, target: np.ndarray,
                 cfg: LossConfig = LossConfig(kind="ce_dice")) -> Tensor:
    """mix * cross-entropy + (1 - mix) * dice."""
    ce = cross_entropy(scores, target, cfg)
    dc = dice_loss(scores, target, cfg)
    return T.add(T.mul_scalar(ce, cfg.mix), T.mul_scalar(dc, 1.0 - cfg.mix))


def compute_loss(scores: Tensor, target: np.ndarray, cfg: LossConfig) -> Tensor:
    if cfg.kind == "focal":
        return focal_loss(scores, target, cfg)
    if cfg.kind == "dice":
        return dice_loss(scores, target, cfg)
    if cfg.kind == "ce_dice":
        return ce_dice_loss(scores, target, cfg)
    raise ContractError(f"unknown loss kind {cfg.kind!r}")
