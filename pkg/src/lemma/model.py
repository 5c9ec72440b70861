"""Three-branch segmentation network over pyramid levels, plus analytic
parameter and FLOPs counters.

The low branch works on the quarter-resolution residual, the middle branch on
the half-resolution band, and the high branch reconstructs the full-resolution
mask from 16-channel features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, pyramid
from . import tensor as T
from .errors import ConfigError, DimensionError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class LemmaConfig:
    nrb_l: int = 7
    nrb_m: int = 7
    nrb_h: int = 1
    nc: int = 5
    width_low: int = 64   # channel width of the low/middle branches
    width_high: int = 16  # channel width of the high branch

    def validate(self) -> None:
        if min(self.nrb_l, self.nrb_m, self.nrb_h) < 0:
            raise ConfigError(f"residual-block counts must be >= 0, got "
                              f"({self.nrb_l},{self.nrb_m},{self.nrb_h})")
        if self.nc < 2:
            raise ConfigError(f"class count must be >= 2, got {self.nc}")
        if self.width_low < 1 or self.width_high < 1:
            raise ConfigError("channel widths must be >= 1")


class ParamStore:
    """Ordered, uniquely named collection of learnable tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, t: Tensor) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t.requires_grad = True
        self._params[name] = t
        return t

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)


@dataclass
class ForwardTrace:
    """Intermediate feature maps of one forward pass."""
    l3f: Tensor       # low-branch output, half res, width_low ch
    l3_up: Tensor     # upsampled residual side path, half res, width_low ch
    l_concat: Tensor  # middle-branch input, 3 + 2*width_low ch
    l_mfb: Tensor     # middle-branch core output, width_low ch
    l_cc_mid: Tensor  # concat with l3f, 2*width_low ch
    l_out: Tensor     # full res, width_high ch
    m_final: Tensor   # full res, nc ch, pre-softmax scores


# scale of a layer's *output* feature map relative to the input image
_QUARTER, _HALF, _FULL = 4, 2, 1


@dataclass(frozen=True)
class LayerSpec:
    """Static description of one layer for the analytic cost counters."""
    name: str
    kind: str       # conv | transpose | norm | act
    c_in: int
    c_out: int
    k: int          # kernel size (0 for norm/act)
    scale: int      # output dims are (H/scale, W/scale)


class LemmaModel:
    """Built network: config, named parameters, and the layer graph."""

    def __init__(self, config: LemmaConfig, params: ParamStore, layers: dict,
                 layer_specs: list[LayerSpec]):
        self.config = config
        self.params = params
        self._layers = layers
        self.layer_specs = layer_specs


def build(config: LemmaConfig, seed: int = 0) -> LemmaModel:
    """Construct the model with deterministic seeded initialization."""
    config.validate()
    rng = np.random.default_rng(seed)
    store = ParamStore()
    layers: dict = {}
    specs: list[LayerSpec] = []
    wl, wh, nc = config.width_low, config.width_high, config.nc

    def reg_conv(name, out_ch, in_ch, scale):
        p = nn.init_conv(rng, out_ch, in_ch, 3)
        store.register(f"{name}.weight", p.weight)
        store.register(f"{name}.bias", p.bias)
        layers[name] = p
        specs.append(LayerSpec(name, "conv", in_ch, out_ch, 3, scale))
        return p

    def reg_tconv(name, in_ch, out_ch, scale):
        p = nn.init_transpose_conv(rng, in_ch, out_ch)
        store.register(f"{name}.weight", p.weight)
        store.register(f"{name}.bias", p.bias)
        layers[name] = p
        specs.append(LayerSpec(name, "transpose", in_ch, out_ch, 2, scale))
        return p

    def reg_norm(name, ch, scale):
        p = nn.init_instance_norm(ch)
        store.register(f"{name}.gamma", p.gamma)
        store.register(f"{name}.beta", p.beta)
        layers[name] = p
        specs.append(LayerSpec(name, "norm", ch, ch, 0, scale))
        return p

    def reg_act(name, ch, scale):
        specs.append(LayerSpec(name, "act", ch, ch, 0, scale))

    def reg_block(name, ch, scale):
        p = nn.init_residual_block(rng, ch)
        store.register(f"{name}.conv1.weight", p.conv1.weight)
        store.register(f"{name}.conv1.bias", p.conv1.bias)
        store.register(f"{name}.conv2.weight", p.conv2.weight)
        store.register(f"{name}.conv2.bias", p.conv2.bias)
        layers[name] = p
        specs.append(LayerSpec(f"{name}.conv1", "conv", ch, ch, 3, scale))
        specs.append(LayerSpec(f"{name}.act", "act", ch, ch, 0, scale))
        specs.append(LayerSpec(f"{name}.conv2", "conv", ch, ch, 3, scale))

    # low branch: quarter-res residual in, half-res features out
    reg_conv("lfb.stem", wl, 3, _QUARTER)
    reg_norm("lfb.norm", wl, _QUARTER)
    reg_act("lfb.stem_act", wl, _QUARTER)
    for i in range(config.nrb_l):
        reg_block(f"lfb.block{i}", wl, _QUARTER)
    reg_tconv("lfb.up", wl, wl, _HALF)
    reg_act("lfb.up_act", wl, _HALF)

    # residual side path: lifts the raw low-pass level to branch width
    reg_tconv("side.up", 3, wl, _HALF)
    reg_act("side.up_act", wl, _HALF)

    # middle branch at half resolution
    reg_conv("mfb.stem", wl, 3 + 2 * wl, _HALF)
    reg_norm("mfb.norm", wl, _HALF)
    reg_act("mfb.stem_act", wl, _HALF)
    for i in range(config.nrb_m):
        reg_block(f"mfb.block{i}", wl, _HALF)
    reg_conv("mfb.post", wl, wl, _HALF)
    reg_act("mfb.post_act", wl, _HALF)
    reg_tconv("mfb.up", 2 * wl, wh, _FULL)
    reg_act("mfb.up_act", wh, _FULL)

    # high branch at full resolution
    reg_conv("hfb.stem", wh, wh + 3, _FULL)
    reg_act("hfb.stem_act", wh, _FULL)
    for i in range(config.nrb_h):
        reg_block(f"hfb.block{i}", wh, _FULL)
    reg_conv("hfb.head", nc, wh, _FULL)

    return LemmaModel(config, store, layers, specs)


def forward(model: LemmaModel, image: Tensor) -> ForwardTrace:
    """Run the network; input is (B, 3, H, W) with H, W divisible by 4."""
    b, c, h, w = image.shape
    if c != 3:
        raise ShapeError(f"expected a 3-channel image, got shape {image.shape}")
    if h % 4 or w % 4:
        raise DimensionError(f"spatial dims {h}x{w} must be divisible by 4")
    L = model._layers
    levels = pyramid.decompose(image, depth=3)

    t = nn.leaky_relu(nn.instance_norm(nn.conv2d(levels.l3, L["lfb.stem"]),
                                       L["lfb.norm"]))
    for i in range(model.config.nrb_l):
        t = nn.residual_block(t, L[f"lfb.block{i}"])
    l3f = nn.leaky_relu(nn.transpose_conv2d(t, L["lfb.up"]))

    l3_up = nn.leaky_relu(nn.transpose_conv2d(levels.l3, L["side.up"]))

    l_concat = T.concat_channels(levels.l2, l3f, l3_up)
    m = nn.leaky_relu(nn.instance_norm(nn.conv2d(l_concat, L["mfb.stem"]),
                                       L["mfb.norm"]))
    for i in range(model.config.nrb_m):
        m = nn.residual_block(m, L[f"mfb.block{i}"])
    l_mfb = nn.leaky_relu(nn.conv2d(m, L["mfb.post"]))
    l_cc_mid = T.concat_channels(l_mfb, l3f)
    l_out = nn.leaky_relu(nn.transpose_conv2d(l_cc_mid, L["mfb.up"]))

    hh = T.concat_channels(levels.l1, l_out)
    hh = nn.leaky_relu(nn.conv2d(hh, L["hfb.stem"]))
    for i in range(model.config.nrb_h):
        hh = nn.residual_block(hh, L[f"hfb.block{i}"])
    m_final = nn.conv2d(hh, L["hfb.head"])

    return ForwardTrace(l3f=l3f, l3_up=l3_up, l_concat=l_concat, l_mfb=l_mfb,
                        l_cc_mid=l_cc_mid, l_out=l_out, m_final=m_final)


def count_params(model: LemmaModel) -> int:
    """Total element count over all learnable tensors."""
    return sum(t.data.size for t in model.params.tensors())


def closed_form_param_count(config: LemmaConfig) -> int:
    """Independent per-layer audit of the parameter count."""
    wl, wh, nc = config.width_low, config.width_high, config.nc
    conv = lambda ci, co: ci * co * 9 + co
    tconv = lambda ci, co: ci * co * 4 + co
    block = lambda ch: 2 * conv(ch, ch)
    return (conv(3, wl) + 2 * wl                 # low stem + norm
            + config.nrb_l * block(wl)
            + tconv(wl, wl)                      # low tail upsample
            + tconv(3, wl)                       # residual side path
            + conv(3 + 2 * wl, wl) + 2 * wl      # middle stem + norm
            + config.nrb_m * block(wl)
            + conv(wl, wl)                       # middle post conv
            + tconv(2 * wl, wh)                  # to full resolution
            + conv(wh + 3, wh)                   # high stem
            + config.nrb_h * block(wh)
            + conv(wh, nc))                      # head


def count_flops(model: LemmaModel, input_h: int, input_w: int) -> dict:
    """Analytic per-layer MAC/FLOP report at the given input resolution.

    Convention: FLOPs = 2 * MACs for conv layers; norms and activations are
    counted at one FLOP per output element (and zero MACs).
    """
    if input_h % 4 or input_w % 4:
        raise DimensionError(f"dims {input_h}x{input_w} must be divisible by 4")
    report = []
    total_macs = 0
    total_flops = 0
    for spec in model.layer_specs:
        oh, ow = input_h // spec.scale, input_w // spec.scale
        if spec.kind in ("conv", "transpose"):
            macs = spec.k * spec.k * spec.c_in * spec.c_out * oh * ow
            flops = 2 * macs
        else:
            macs = 0
            flops = spec.c_out * oh * ow
        total_macs += macs
        total_flops += flops
        report.append({"name": spec.name, "kind": spec.kind, "out_h": oh,
                       "out_w": ow, "c_in": spec.c_in, "c_out": spec.c_out,
                       "macs": macs, "flops": flops})
    return {"input_h": input_h, "input_w": input_w, "layers": report,
            "total_macs": total_macs, "total_flops": total_flops,
            "gmacs": total_macs / 1e9, "gflops": total_flops / 1e9}


def predict_mask(model: LemmaModel, image: Tensor) -> np.ndarray:
    """Per-pixel argmax class map; ties go to the lowest class index."""
    with T.no_grad():
        trace = forward(model, image)
    return np.argmax(trace.m_final.data, axis=1).astype(np.int64)
