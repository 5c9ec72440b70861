"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The lines are written to the real stdout (bypassing capture) so they appear
in any pytest invocation. The training criterion builds a 200-scene synthetic
dataset and trains three small models, which dominates the suite's runtime.
"""
import csv
import functools
import os
import time

import numpy as np
import pytest

from conftest import check_gradients, model_to_float64
from lemma import data as D
from lemma import losses as L
from lemma import model as M
from lemma import nn
from lemma import pyramid as P
from lemma import tensor as T
from lemma import trainer as TR
from lemma.checkpoint import load_checkpoint, save_checkpoint
from lemma.cli import main as cli_main
from lemma.losses import LossConfig
from lemma.model import LemmaConfig
from lemma.tensor import Tensor

TINY = LemmaConfig(nrb_l=1, nrb_m=1, nrb_h=1, nc=2, width_low=3, width_high=2)

TRAIN_CONFIG = LemmaConfig(nrb_l=3, nrb_m=3, nrb_h=1, nc=4)
TRAIN_BUDGET_S = 1800.0          # per-loss wall-clock budget
FOCAL_TARGET = 0.85
OTHER_TARGET = 0.80

# one line per criterion; echoed in the terminal summary by conftest so the
# lines survive pytest's output capture
RESULT_LINES: list[str] = []


def _record(line):
    RESULT_LINES.append(line)
    print(line, flush=True)


def criterion(num, title):
    """Emit '[acceptance] criterion N (title): PASS/FAIL' around a test."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as e:
                _record(f"[acceptance] criterion {num} ({title}): FAIL — "
                        f"{type(e).__name__}: {e}")
                raise
            line = f"[acceptance] criterion {num} ({title}): PASS"
            if detail:
                line += f" — {detail}"
            _record(line)
        return wrapper
    return deco


@pytest.fixture(scope="module")
def scene_manifest(tmp_path_factory):
    """200 synthetic 64x64 four-class scenes, 80/20 train/val."""
    out = str(tmp_path_factory.mktemp("scenes"))
    path = D.build_synthetic_dataset(out, 200, size=64, nc=4, seed=7,
                                     val_fraction=0.2)
    return D.load_manifest(path)


@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory):
    """A few 32x32 scenes for the checkpoint and ablation criteria."""
    out = str(tmp_path_factory.mktemp("small"))
    path = D.build_synthetic_dataset(out, 12, size=32, nc=4, seed=11,
                                     val_fraction=0.25)
    return D.load_manifest(path)


@criterion(1, "pyramid exactness")
def test_criterion_1_pyramid_roundtrip():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        x = Tensor(rng.uniform(0, 1, size=(1, 3, 64, 64)).astype(np.float32))
        r = P.reconstruct(P.decompose(x))
        worst = max(worst, float(np.abs(r.data - x.data).max()))
    elapsed = time.perf_counter() - t0
    assert worst <= 1e-5, f"max reconstruction error {worst:.2e} > 1e-5"
    assert elapsed < 5.0, f"took {elapsed:.2f}s >= 5s"
    return f"max err {worst:.2e} over 100 images in {elapsed:.2f}s"


@criterion(2, "gradient soundness")
def test_criterion_2_gradients():
    checked = 0

    def conv_instance(rng):
        x = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True)
        p = nn.init_conv(rng, 3, 2, 3)
        p.weight.data = p.weight.data.astype(np.float64)
        p.bias.data = rng.normal(size=p.bias.shape)
        return (lambda: T.sum_all(T.mul(nn.conv2d(x, p), nn.conv2d(x, p))),
                [x, p.weight, p.bias])

    def tconv_instance(rng):
        x = Tensor(rng.normal(size=(1, 2, 3, 4)), requires_grad=True)
        p = nn.init_transpose_conv(rng, 2, 3)
        p.weight.data = p.weight.data.astype(np.float64)
        p.bias.data = rng.normal(size=p.bias.shape)
        y = lambda: nn.transpose_conv2d(x, p)
        return lambda: T.sum_all(T.mul(y(), y())), [x, p.weight, p.bias]

    def inorm_instance(rng):
        x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
        p = nn.InstanceNormParams(
            gamma=Tensor(rng.normal(1.0, 0.2, size=(1, 3, 1, 1)), requires_grad=True),
            beta=Tensor(rng.normal(0.0, 0.2, size=(1, 3, 1, 1)), requires_grad=True))
        w = rng.normal(size=(2, 3, 4, 4))
        return (lambda: T.sum_weighted(nn.instance_norm(x, p), w),
                [x, p.gamma, p.beta])

    def lrelu_instance(rng):
        x = Tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
        y = lambda: nn.leaky_relu(x)
        return lambda: T.sum_all(T.mul(y(), y())), [x]

    def block_instance(rng):
        x = Tensor(rng.normal(size=(1, 3, 6, 6)) * 0.5, requires_grad=True)
        p = nn.init_residual_block(rng, 3)
        for c in (p.conv1, p.conv2):
            c.weight.data = c.weight.data.astype(np.float64)
            c.bias.data = rng.normal(size=c.bias.shape)
        y = lambda: nn.residual_block(x, p)
        return (lambda: T.sum_all(T.mul(y(), y())),
                [x, p.conv1.weight, p.conv2.weight, p.conv1.bias, p.conv2.bias])

    def loss_instance_factory(kind):
        def make(rng):
            s = Tensor(rng.normal(size=(1, 3, 4, 4)) * 2.0, requires_grad=True)
            target = rng.integers(0, 3, size=(1, 4, 4))
            cfg = LossConfig(kind=kind)
            return lambda: L.compute_loss(s, target, cfg), [s]
        return make

    def full_model_instance(seed):
        # an instance whose pre-activation lands within the FD step of a
        # leaky-ReLU kink has no valid finite-difference oracle, so the five
        # instances are pinned to seeds verified to sit away from kinks
        rng = np.random.default_rng(seed % 1000 + 500)
        model = model_to_float64(M.build(TINY, seed=seed % 1000))
        img = Tensor(rng.uniform(0, 1, size=(1, 3, 8, 8)), requires_grad=True)
        target = rng.integers(0, TINY.nc, size=(1, 8, 8))
        tensors = [img, model.params["lfb.stem.weight"],
                   model.params["mfb.up.bias"], model.params["hfb.head.weight"]]
        return (lambda: L.focal_loss(M.forward(model, img).m_final, target),
                tensors)

    instances = {
        "conv2d": conv_instance,
        "transpose_conv2d": tconv_instance,
        "instance_norm": inorm_instance,
        "leaky_relu": lrelu_instance,
        "residual_block": block_instance,
        "focal_loss": loss_instance_factory("focal"),
        "dice_loss": loss_instance_factory("dice"),
        "ce_dice_loss": loss_instance_factory("ce_dice"),
        "full_model": full_model_instance,
    }
    worst = 0.0
    for op_index, (name, make) in enumerate(instances.items()):
        for seed in range(5):
            instance_seed = 1000 * op_index + seed
            if name == "full_model":
                make_loss, tensors = make(instance_seed)
            else:
                make_loss, tensors = make(np.random.default_rng(instance_seed))
            err = check_gradients(make_loss, tensors)
            worst = max(worst, err)
            checked += 1
    return (f"{checked} instances across {len(instances)} ops, "
            f"worst relative error {worst:.1e} (tol 1e-3)")


@criterion(3, "parameter-count reproduction")
def test_criterion_3_param_counts():
    big = LemmaConfig(nrb_l=7, nrb_m=7, nrb_h=1, nc=5)
    n_big = M.count_params(M.build(big))
    assert n_big == M.closed_form_param_count(big)
    assert abs(n_big - 1.07e6) / 1.07e6 <= 0.15

    small = LemmaConfig(nrb_l=6, nrb_m=7, nrb_h=4, nc=4)
    n_small = M.count_params(M.build(small))
    assert n_small == M.closed_form_param_count(small)
    assert abs(n_small - 1.01e6) / 1.01e6 <= 0.15

    # head-excluded delta: compare both at nc=4 so only block counts differ
    delta = (M.closed_form_param_count(LemmaConfig(nrb_l=7, nrb_m=7, nrb_h=1, nc=4))
             - n_small)
    assert delta == 59_936
    assert abs(delta - 0.06e6) / 0.06e6 <= 0.01
    return (f"(7,7,1) nc=5: {n_big:,}; (6,7,4) nc=4: {n_small:,}; "
            f"head-excluded delta {delta:,}")


@criterion(4, "FLOPs counter")
def test_criterion_4_flops():
    model = M.build(LemmaConfig(nrb_l=7, nrb_m=7, nrb_h=1, nc=5))
    rep = M.count_flops(model, 384, 512)
    for layer, spec in zip(rep["layers"], model.layer_specs):
        oh, ow = 384 // spec.scale, 512 // spec.scale
        if spec.kind in ("conv", "transpose"):
            assert layer["macs"] == spec.k ** 2 * spec.c_in * spec.c_out * oh * ow
            assert layer["flops"] == 2 * layer["macs"]
        else:
            assert layer["macs"] == 0
            assert layer["flops"] == spec.c_out * oh * ow
    assert rep["total_macs"] == sum(l["macs"] for l in rep["layers"])

    reference = TR.REPORTED_GFLOPS_384x512
    ratio = rep["gmacs"] / reference
    caveat = ("counted as 2 FLOPs per MAC; the reference figure's convention "
              "is unstated, so the factor-3 comparison uses GMACs")
    _record(f"[acceptance]   (7,7,1) @ 384x512: {rep['gmacs']:.2f} GMACs / "
            f"{rep['gflops']:.2f} GFLOPs vs reference {reference}; {caveat}")
    assert 1 / 3 <= ratio <= 3, f"GMACs ratio {ratio:.2f} outside [1/3, 3]"
    return f"per-layer formula exact; GMACs ratio {ratio:.2f} (< 3)"


@pytest.mark.parametrize("kind,target", [
    ("focal", FOCAL_TARGET), ("dice", OTHER_TARGET), ("ce_dice", OTHER_TARGET)])
def test_criterion_5_learnability(scene_manifest, tmp_path, kind, target):
    @criterion(5, f"end-to-end learnability [{kind}]")
    def run():
        t0 = time.perf_counter()
        result = TR.train(scene_manifest, TRAIN_CONFIG, LossConfig(kind=kind),
                          lr=1e-3, epochs=40, batch_size=8, seed=0,
                          out_dir=str(tmp_path / kind), target_miou=target,
                          time_budget_s=TRAIN_BUDGET_S)
        elapsed = time.perf_counter() - t0
        assert elapsed < TRAIN_BUDGET_S, f"budget exceeded ({elapsed:.0f}s)"
        assert result.best_miou is not None and result.best_miou >= target, (
            f"{kind}: best val mIoU {result.best_miou} < {target} "
            f"after {len(result.history)} epochs / {elapsed:.0f}s")
        return (f"val mIoU {result.best_miou:.3f} >= {target} in "
                f"{len(result.history)} epochs, {elapsed:.0f}s")
    run()


@criterion(6, "shape contract fuzzing")
def test_criterion_6_shape_fuzz():
    cfg = LemmaConfig(nrb_l=0, nrb_m=0, nrb_h=0, nc=4)  # default widths
    model = M.build(cfg, seed=0)
    rng = np.random.default_rng(42)
    for _ in range(100):
        h = 4 * int(rng.integers(2, 33))
        w = 4 * int(rng.integers(2, 33))
        with T.no_grad():
            trace = M.forward(model, Tensor(
                rng.uniform(0, 1, size=(1, 3, h, w)).astype(np.float32)))
        assert trace.l_concat.shape == (1, 131, h // 2, w // 2)
        assert trace.l_cc_mid.shape == (1, 128, h // 2, w // 2)
        assert trace.l_out.shape == (1, 16, h, w)
        assert trace.m_final.shape == (1, cfg.nc, h, w)
    return "100 random sizes in [8,128]: 131 -> 128 -> 16 -> nc schedule exact"


@criterion(7, "checkpoint fidelity")
def test_criterion_7_checkpoints(small_manifest, tmp_path):
    cfg = LemmaConfig(nrb_l=1, nrb_m=1, nrb_h=1, nc=4, width_low=8, width_high=4)
    # save -> load -> bit-identical forward on a fixed input
    model = M.build(cfg, seed=9)
    path = str(tmp_path / "model.ckpt")
    save_checkpoint(path, model)
    loaded, _, _ = load_checkpoint(path)
    rng = np.random.default_rng(0)
    img = Tensor(rng.uniform(0, 1, size=(1, 3, 32, 32)).astype(np.float32))
    a = M.forward(model, img).m_final.data
    b = M.forward(loaded, img).m_final.data
    assert np.array_equal(a, b), "forward outputs differ after save/load"

    # interrupted + resumed training == uninterrupted training
    full = TR.train(small_manifest, cfg, epochs=4, batch_size=4, seed=3,
                    out_dir=str(tmp_path / "full"))
    TR.train(small_manifest, cfg, epochs=2, batch_size=4, seed=3,
             out_dir=str(tmp_path / "part"))
    resumed = TR.train(small_manifest, cfg, epochs=4, batch_size=4, seed=3,
                       out_dir=str(tmp_path / "resumed"),
                       resume=str(tmp_path / "part" / "last.ckpt"))
    for name, t in full.model.params.items():
        assert np.array_equal(t.data, resumed.model.params[name].data), (
            f"parameter {name} differs after resume")
    full_tail = [(h["epoch"], h["loss"]) for h in full.history[2:]]
    resumed_tail = [(h["epoch"], h["loss"]) for h in resumed.history]
    assert full_tail == resumed_tail, "resumed metrics differ"
    return "save/load forward bit-identical; resume reproduces epochs 2-3 exactly"


@criterion(8, "ablation harness")
def test_criterion_8_ablation(small_manifest, tmp_path):
    grid_path = str(tmp_path / "grid.txt")
    with open(grid_path, "w") as f:
        f.write("3,3,3\n3,7,3\n7,7,1\n")
    out = str(tmp_path / "ablation.csv")
    manifest_path = os.path.join(small_manifest.root, "manifest.json")
    rc = cli_main(["ablate", "--manifest", manifest_path, "--grid", grid_path,
                   "--out", out, "--size", "64x64", "--epochs", "1",
                   "--batch", "4", "--seed", "0"])
    assert rc == 0
    with open(out) as f:
        rows = list(csv.DictReader(f))
    assert [(r["nrb_l"], r["nrb_m"], r["nrb_h"]) for r in rows] == [
        ("3", "3", "3"), ("3", "7", "3"), ("7", "7", "1")]
    params = [int(r["params"]) for r in rows]
    gflops = [float(r["gflops"]) for r in rows]
    assert params == sorted(params) and len(set(params)) == 3, params
    assert gflops == sorted(gflops) and len(set(gflops)) == 3, gflops
    for r in rows:
        assert 0.0 <= float(r["miou"]) <= 1.0
    return (f"params {params[0]:,} < {params[1]:,} < {params[2]:,}; "
            f"gflops {gflops[0]:.3f} < {gflops[1]:.3f} < {gflops[2]:.3f}")
