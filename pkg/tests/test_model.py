import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import check_gradients, model_to_float64
from lemma import losses as L
from lemma import model as M
from lemma import tensor as T
from lemma.errors import ConfigError, DimensionError, ShapeError
from lemma.model import LemmaConfig
from lemma.tensor import Tensor

TINY = LemmaConfig(nrb_l=1, nrb_m=1, nrb_h=1, nc=2, width_low=3, width_high=2)


def random_image(rng, shape=(1, 3, 16, 16), dtype=np.float32):
    return Tensor(rng.uniform(0, 1, size=shape).astype(dtype))


class TestConfig:
    def test_defaults(self):
        cfg = LemmaConfig()
        assert (cfg.nrb_l, cfg.nrb_m, cfg.nrb_h) == (7, 7, 1)
        assert cfg.nc == 5

    @pytest.mark.parametrize("bad", [
        dict(nrb_l=-1), dict(nc=1), dict(width_low=0), dict(width_high=0)])
    def test_invalid_rejected(self, bad):
        with pytest.raises(ConfigError):
            LemmaConfig(**bad).validate()


class TestParamCount:
    def test_default_config_total(self):
        model = M.build(LemmaConfig())
        n = M.count_params(model)
        assert n == 1_182_085
        assert n == M.closed_form_param_count(model.config)

    def test_ablation_config_total(self):
        cfg = LemmaConfig(nrb_l=6, nrb_m=7, nrb_h=4, nc=4)
        model = M.build(cfg)
        n = M.count_params(model)
        assert n == 1_122_004
        assert n == M.closed_form_param_count(cfg)

    def test_head_excluded_delta(self):
        # moving (7,7,1) nc=5 -> (6,7,4) nc=4 changes everything except the
        # head by exactly one 64-ch block minus three 16-ch blocks
        a = M.closed_form_param_count(LemmaConfig(nc=4))
        b = M.closed_form_param_count(LemmaConfig(nrb_l=6, nrb_m=7, nrb_h=4, nc=4))
        delta = a - b
        assert delta == 59_936
        assert abs(delta - 60_000) / 60_000 < 0.01

    @pytest.mark.parametrize("field,lo,hi", [
        ("nrb_l", 1, 7), ("nrb_m", 1, 7), ("nrb_h", 1, 4), ("nc", 2, 8)])
    def test_monotone_in_each_knob(self, field, lo, hi):
        lo_n = M.closed_form_param_count(LemmaConfig(**{field: lo}))
        hi_n = M.closed_form_param_count(LemmaConfig(**{field: hi}))
        assert lo_n < hi_n

    def test_closed_form_matches_store_for_random_configs(self, rng):
        for _ in range(5):
            cfg = LemmaConfig(nrb_l=int(rng.integers(0, 4)),
                              nrb_m=int(rng.integers(0, 4)),
                              nrb_h=int(rng.integers(0, 3)),
                              nc=int(rng.integers(2, 6)),
                              width_low=int(rng.integers(2, 8)),
                              width_high=int(rng.integers(2, 6)))
            assert M.count_params(M.build(cfg)) == M.closed_form_param_count(cfg)

    def test_zero_block_chains_build_and_run(self, rng):
        cfg = LemmaConfig(nrb_l=0, nrb_m=0, nrb_h=0, nc=2,
                          width_low=2, width_high=2)
        trace = M.forward(M.build(cfg), random_image(rng, (1, 3, 8, 8)))
        assert trace.m_final.shape == (1, 2, 8, 8)


class TestBuildDeterminism:
    def test_same_seed_identical(self):
        a = M.build(LemmaConfig(width_low=4, width_high=2), seed=11)
        b = M.build(LemmaConfig(width_low=4, width_high=2), seed=11)
        assert a.params.names() == b.params.names()
        for name, t in a.params.items():
            assert np.array_equal(t.data, b.params[name].data)

    def test_different_seed_differs(self):
        a = M.build(TINY, seed=0)
        b = M.build(TINY, seed=1)
        assert not np.array_equal(a.params["lfb.stem.weight"].data,
                                  b.params["lfb.stem.weight"].data)


class TestForwardShapes:
    def test_internal_shape_schedule(self, rng):
        model = M.build(LemmaConfig())
        trace = M.forward(model, random_image(rng, (1, 3, 32, 32)))
        assert trace.l3f.shape == (1, 64, 16, 16)
        assert trace.l3_up.shape == (1, 64, 16, 16)
        assert trace.l_concat.shape == (1, 131, 16, 16)
        assert trace.l_mfb.shape == (1, 64, 16, 16)
        assert trace.l_cc_mid.shape == (1, 128, 16, 16)
        assert trace.l_out.shape == (1, 16, 32, 32)
        assert trace.m_final.shape == (1, 5, 32, 32)

    def test_wrong_channel_count(self, rng):
        model = M.build(TINY)
        with pytest.raises(ShapeError):
            M.forward(model, Tensor(rng.normal(size=(1, 4, 8, 8))))

    def test_non_divisible_dims(self, rng):
        model = M.build(TINY)
        with pytest.raises(DimensionError):
            M.forward(model, Tensor(rng.normal(size=(1, 3, 10, 8))))

    def test_batch_dimension_carried(self, rng):
        model = M.build(TINY)
        trace = M.forward(model, random_image(rng, (3, 3, 8, 12)))
        assert trace.m_final.shape == (3, 2, 8, 12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 32), st.integers(2, 32), st.integers(2, 5))
def test_shape_contract_fuzz(hq, wq, nc):
    h, w = 4 * hq, 4 * wq
    model = M.build(LemmaConfig(nrb_l=0, nrb_m=0, nrb_h=0, nc=nc,
                                width_low=2, width_high=2))
    rng = np.random.default_rng(hq * 1000 + wq * 10 + nc)
    with T.no_grad():
        trace = M.forward(model, Tensor(
            rng.uniform(0, 1, size=(1, 3, h, w)).astype(np.float32)))
    assert trace.l_concat.shape == (1, 7, h // 2, w // 2)
    assert trace.l_out.shape == (1, 2, h, w)
    assert trace.m_final.shape == (1, nc, h, w)


class TestFlops:
    def test_single_conv_example(self):
        # conv 64->64 k=3 over a 128x96 map: 9*64*64*128*96 MACs
        model = M.build(LemmaConfig())
        rep = M.count_flops(model, 512, 384)
        layer = next(l for l in rep["layers"] if l["name"] == "lfb.block0.conv1")
        assert layer["macs"] == 9 * 64 * 64 * 128 * 96
        assert layer["macs"] == 452_984_832
        assert layer["flops"] == 2 * layer["macs"]

    def test_totals_sum_layers(self):
        model = M.build(LemmaConfig())
        rep = M.count_flops(model, 64, 64)
        assert rep["total_macs"] == sum(l["macs"] for l in rep["layers"])
        assert rep["total_flops"] == sum(l["flops"] for l in rep["layers"])

    def test_reference_resolution_totals(self):
        rep = M.count_flops(M.build(LemmaConfig()), 384, 512)
        assert rep["gmacs"] == pytest.approx(41.290, abs=5e-3)
        assert rep["gflops"] == pytest.approx(82.63, abs=1e-2)

    def test_quadratic_in_resolution(self):
        model = M.build(LemmaConfig(nrb_l=1, nrb_m=1, nrb_h=1))
        small = M.count_flops(model, 64, 64)["total_macs"]
        big = M.count_flops(model, 128, 128)["total_macs"]
        assert big == 4 * small

    def test_monotone_in_depth(self):
        shallow = M.count_flops(M.build(LemmaConfig(nrb_l=3, nrb_m=3, nrb_h=3)),
                                64, 64)["total_flops"]
        deep = M.count_flops(M.build(LemmaConfig(nrb_l=3, nrb_m=7, nrb_h=3)),
                             64, 64)["total_flops"]
        assert shallow < deep

    def test_bad_resolution(self):
        with pytest.raises(DimensionError):
            M.count_flops(M.build(TINY), 10, 16)


class TestPredictMask:
    def test_matches_brute_force_argmax(self, rng):
        model = M.build(TINY, seed=3)
        img = random_image(rng, (2, 3, 8, 8))
        mask = M.predict_mask(model, img)
        with T.no_grad():
            scores = M.forward(model, img).m_final.data
        for b in range(2):
            for i in range(8):
                for j in range(8):
                    best, best_v = 0, scores[b, 0, i, j]
                    for c in range(1, scores.shape[1]):
                        if scores[b, c, i, j] > best_v:
                            best, best_v = c, scores[b, c, i, j]
                    assert mask[b, i, j] == best

    def test_tie_breaks_to_lowest_class(self):
        assert int(np.argmax(np.zeros(5))) == 0  # documents numpy's rule
        a = np.array([[[[1.0]], [[1.0]], [[0.5]]]])
        assert np.argmax(a, axis=1)[0, 0, 0] == 0

    def test_output_dtype_and_range(self, rng):
        model = M.build(TINY, seed=5)
        mask = M.predict_mask(model, random_image(rng, (1, 3, 8, 8)))
        assert mask.dtype == np.int64
        assert mask.min() >= 0 and mask.max() < TINY.nc


class TestFullModelGradients:
    @pytest.mark.parametrize("seed", range(3))
    def test_loss_gradients_wrt_all_params(self, seed):
        rng = np.random.default_rng(seed + 100)
        model = model_to_float64(M.build(TINY, seed=seed))
        img = random_image(rng, (1, 3, 8, 8), dtype=np.float64)
        target = rng.integers(0, TINY.nc, size=(1, 8, 8))

        def loss():
            return L.focal_loss(M.forward(model, img).m_final, target)

        # spot-check a spread of parameters across all three branches
        names = ["lfb.stem.weight", "lfb.up.bias", "side.up.weight",
                 "mfb.norm.gamma", "mfb.block0.conv2.weight", "mfb.up.weight",
                 "hfb.stem.bias", "hfb.head.weight"]
        check_gradients(loss, [model.params[n] for n in names])

    def test_gradient_wrt_input_image(self):
        rng = np.random.default_rng(7)
        model = model_to_float64(M.build(TINY, seed=7))
        img = Tensor(rng.uniform(0, 1, size=(1, 3, 8, 8)), requires_grad=True)
        target = rng.integers(0, TINY.nc, size=(1, 8, 8))
        check_gradients(lambda: L.ce_dice_loss(M.forward(model, img).m_final,
                                               target), [img])
