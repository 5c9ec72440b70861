"""Adam training loop, evaluation, and wall-clock/FLOPs profiling."""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetManifest, batch_iter
from .errors import ConfigError, NumericError, TrainingError
from .losses import LossConfig, compute_loss
from .metrics import ConfusionMatrix
from .model import LemmaConfig, LemmaModel, ParamStore
from .tensor import Tensor

# originally reported cost of the heaviest (7,7,1) configuration at 384x512,
# used only as context in profiling output
REPORTED_GFLOPS_384x512 = 17.83
REPORTED_PARAMS_M = 1.07


@dataclass
class AdamState:
    """Bias-corrected Adam moments, keyed by parameter name."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def init_for(self, params: ParamStore) -> "AdamState":
        for name, p in params.items():
            self.m[name] = np.zeros_like(p.data)
            self.v[name] = np.zeros_like(p.data)
        return self


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One bias-corrected Adam update; clears gradients afterwards."""
    for name, p in params.items():
        if p.grad is None:
            raise TrainingError(f"parameter {name!r} has no gradient")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p.grad = None


@dataclass
class TrainResult:
    model: LemmaModel
    history: list
    best_miou: float | None
    best_checkpoint: str | None
    last_checkpoint: str | None


def evaluate(model: LemmaModel, manifest: DatasetManifest, split: str,
             batch_size: int = 4) -> dict:
    """Confusion-matrix metrics over one split (padding pixels ignored)."""
    cm = ConfusionMatrix(manifest.nc)
    for images, masks, _ in batch_iter(manifest, split, batch_size, seed=0, epoch=0):
        pred = M.predict_mask(model, images)
        cm.accumulate(pred, masks)
    return cm.report(manifest.classes)


def train(manifest: DatasetManifest, config: LemmaConfig,
          loss_config: LossConfig = LossConfig(), lr: float = 1e-3,
          epochs: int = 10, batch_size: int = 8, seed: int = 0,
          out_dir: str | None = None, val_split: str = "val",
          eval_every: int = 1, resume: str | None = None,
          target_miou: float | None = None,
          time_budget_s: float | None = None,
          log=None) -> TrainResult:
    """Deterministic training run; saves last/best checkpoints per epoch.

    Resume restarts from an epoch-boundary checkpoint and reproduces the
    uninterrupted run exactly (per-epoch shuffling is derived from
    (seed, epoch), so no RNG state needs to be captured).
    """
    if config.nc != manifest.nc:
        raise ConfigError(f"config nc={config.nc} != manifest nc={manifest.nc}")
    if resume is not None:
        mdl, state, start_epoch = load_checkpoint(resume)
        if state is None:
            raise TrainingError(f"checkpoint {resume} has no optimizer state")
        if mdl.config != config:
            raise TrainingError(f"checkpoint config {mdl.config} != requested {config}")
    else:
        mdl = M.build(config, seed=seed)
        state = AdamState(lr=lr).init_for(mdl.params)
        start_epoch = 0

    history: list[dict] = []
    best_miou = None
    best_path = last_path = None
    metrics_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        best_path = os.path.join(out_dir, "best.ckpt")
        last_path = os.path.join(out_dir, "last.ckpt")
        metrics_path = os.path.join(out_dir, "metrics.jsonl")
        if resume is None and os.path.exists(metrics_path):
            os.remove(metrics_path)

    has_val = bool(manifest.split(val_split))
    t0 = time.perf_counter()
    for epoch in range(start_epoch, epochs):
        losses = []
        for bi, (images, masks, _) in enumerate(
                batch_iter(manifest, "train", batch_size, seed=seed, epoch=epoch)):
            try:
                trace = M.forward(mdl, images)
                loss = compute_loss(trace.m_final, masks, loss_config)
            except NumericError as e:
                raise TrainingError(
                    f"divergence at epoch {epoch} batch {bi}: {e}") from e
            loss.backward()
            losses.append(loss.item())
            adam_step(mdl.params, state)
        record = {"epoch": epoch, "loss": float(np.mean(losses))}

        if has_val and (epoch % eval_every == 0 or epoch == epochs - 1):
            report = evaluate(mdl, manifest, val_split)
            record["val_miou"] = report["miou"]
            if best_miou is None or report["miou"] > best_miou:
                best_miou = report["miou"]
                if best_path is not None:
                    save_checkpoint(best_path, mdl, step=epoch + 1)
        record["elapsed_s"] = round(time.perf_counter() - t0, 3)
        history.append(record)
        if log is not None:
            log(json.dumps(record))
        if last_path is not None:
            save_checkpoint(last_path, mdl, adam_state=state, step=epoch + 1)
        if metrics_path is not None:
            with open(metrics_path, "a") as f:
                f.write(json.dumps(record) + "\n")
        if target_miou is not None and best_miou is not None and best_miou >= target_miou:
            break
        if time_budget_s is not None and time.perf_counter() - t0 > time_budget_s:
            break
    return TrainResult(mdl, history, best_miou, best_path, last_path)


def profile(model: LemmaModel, input_h: int, input_w: int, repeats: int = 50,
            warmup: int = 10, seed: int = 0) -> dict:
    """Timed forward passes plus analytic parameter/FLOPs counts."""
    rng = np.random.default_rng(seed)
    image = Tensor(rng.uniform(0, 1, size=(1, 3, input_h, input_w)).astype(np.float32))
    with T.no_grad():
        for _ in range(warmup):
            M.forward(model, image)
        times = []
        for _ in range(max(repeats, 1)):
            t0 = time.perf_counter()
            M.forward(model, image)
            times.append((time.perf_counter() - t0) * 1000.0)
    flops = M.count_flops(model, input_h, input_w)
    return {
        "input_h": input_h,
        "input_w": input_w,
        "params": M.count_params(model),
        "gmacs": flops["gmacs"],
        "gflops": flops["gflops"],
        "median_ms": float(np.median(times)),
        "p95_ms": float(np.percentile(times, 95)),
        "repeats": len(times),
        "note": ("gflops counts 2 FLOPs per multiply-accumulate; published "
                 "efficiency figures for comparable models often report raw "
                 "multiply-accumulates as GFLOPs"),
    }
