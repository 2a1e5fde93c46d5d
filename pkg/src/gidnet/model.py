"""IMDeception network: Gblocks, GIDBs, the global refinement trunk and the tail.

Channel plan for a given ``core``: trunk width ``C = 4*core``, distilled width
``D = core``, coarse width ``R = 3*core``. The reconstruction tail is fixed at
64 channels for every core.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError
from .ops import LEAKY_SLOPE, ConvParams, conv2d, depth_to_space, leaky_relu, nla_block, relu
from .tensor import DTYPE, add, channel_concat, channel_split, shape_of

TAIL_WIDTH = 64
NUM_GIDB = 6
NLA_AFTER = (2, 4)


@dataclass(frozen=True)
class ModelConfig:
    core: int = 16
    use_nla: bool = True
    scale: int = 4
    nla_tile: int = 16
    in_channels: int = 3

    def __post_init__(self):
        if self.core < 4 or self.core % 4:
            raise ConfigError("core must be divisible by 4")
        if self.scale < 1:
            raise ConfigError(f"scale must be >= 1, got {self.scale}")
        if self.nla_tile < 1:
            raise ConfigError(f"nla_tile must be >= 1, got {self.nla_tile}")
        if self.in_channels != 3:
            raise ConfigError("only 3-channel input is supported")

    @property
    def trunk(self) -> int:
        return 4 * self.core

    @property
    def distill(self) -> int:
        return self.core

    @property
    def coarse(self) -> int:
        return 3 * self.core

    @property
    def has_long_residual(self) -> bool:
        return self.trunk == TAIL_WIDTH


class LayerSpec(NamedTuple):
    name: str
    in_c: int
    out_c: int
    k: int
    groups: int = 1

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_c, self.in_c // self.groups, self.k, self.k)

    @property
    def params(self) -> int:
        return self.out_c * (self.in_c // self.groups) * self.k * self.k + self.out_c

    @property
    def attention(self) -> bool:
        return self.name.startswith("nla")


def _gblock_specs(prefix: str, in_c: int, out_c: int) -> list[LayerSpec]:
    return [
        LayerSpec(f"{prefix}.gconv", in_c, out_c, 3, 4),
        LayerSpec(f"{prefix}.pconv", out_c, out_c, 1),
    ]


def _gidb_specs(prefix: str, in_c: int, cfg: ModelConfig) -> list[LayerSpec]:
    c, d, r = cfg.trunk, cfg.distill, cfg.coarse
    return (
        _gblock_specs(f"{prefix}.gb1", in_c, c)
        + _gblock_specs(f"{prefix}.gb2", r, c)
        + _gblock_specs(f"{prefix}.gb3", r, c)
        + _gblock_specs(f"{prefix}.gb4", r, d)
        + [LayerSpec(f"{prefix}.fuse", 4 * d + in_c, c, 1)]
    )


def layer_specs(cfg: ModelConfig) -> list[LayerSpec]:
    """All convolution layers of the network, in execution order."""
    c, r = cfg.trunk, cfg.coarse
    specs = [LayerSpec("head", cfg.in_channels, c, 3)]
    for n in range(1, NUM_GIDB + 1):
        specs += _gidb_specs(f"gidb{n}", c if n == 1 else r, cfg)
        if cfg.use_nla and n in NLA_AFTER:
            specs += [LayerSpec(f"nla{n}.value", r, r, 1), LayerSpec(f"nla{n}.out", r, r, 1)]
    specs += [
        LayerSpec("tail.h1x1", 5 * cfg.distill + c, TAIL_WIDTH, 1),
        LayerSpec("tail.h3x3", TAIL_WIDTH, TAIL_WIDTH, 3),
        LayerSpec("upsample", TAIL_WIDTH, cfg.in_channels * cfg.scale ** 2, 1),
    ]
    return specs


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for s in layer_specs(cfg):
        shapes[f"{s.name}.weight"] = s.weight_shape
        shapes[f"{s.name}.bias"] = (s.out_c,)
    return shapes


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ShapeError(f"parameter set mismatch; missing={missing} extra={extra}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: shape {self.params[name].shape} != expected {shape}")

    def conv(self, name: str) -> ConvParams:
        groups = 4 if name.endswith("gconv") else 1
        return ConvParams(self.params[f"{name}.weight"], self.params[f"{name}.bias"], groups)

    @property
    def num_convs(self) -> int:
        return len(layer_specs(self.config))


def _layer_rng(seed: int, name: str) -> np.random.Generator:
    key = np.random.SeedSequence([seed, zlib.crc32(name.encode())])
    return np.random.Generator(np.random.Philox(key))


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """Fan-in scaled uniform weights (leaky-ReLU gain), zero biases."""
    gain = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE ** 2))
    params = {}
    for s in layer_specs(cfg):
        fan_in = (s.in_c // s.groups) * s.k * s.k
        bound = gain * math.sqrt(3.0 / fan_in)
        rng = _layer_rng(seed, s.name)
        params[f"{s.name}.weight"] = rng.uniform(-bound, bound, s.weight_shape).astype(DTYPE)
        params[f"{s.name}.bias"] = np.zeros(s.out_c, dtype=DTYPE)
    return Model(cfg, params)


def gblock_forward(x: np.ndarray, model: Model, prefix: str) -> np.ndarray:
    """Grouped 3x3 (groups=4) -> ReLU -> 1x1 -> LeakyReLU(0.05)."""
    if shape_of(x).c % 4:
        raise ShapeError(f"{prefix}: input channels {x.shape[1]} not divisible by 4")
    y = relu(conv2d(x, model.conv(f"{prefix}.gconv"), name=f"{prefix}.gconv"))
    return leaky_relu(conv2d(y, model.conv(f"{prefix}.pconv"), name=f"{prefix}.pconv"))


def gidb_forward(x: np.ndarray, model: Model, prefix: str) -> np.ndarray:
    d = model.config.distill
    s1, d1 = channel_split(gblock_forward(x, model, f"{prefix}.gb1"), d)
    s2, d2 = channel_split(gblock_forward(d1, model, f"{prefix}.gb2"), d)
    s3, d3 = channel_split(gblock_forward(d2, model, f"{prefix}.gb3"), d)
    s4 = gblock_forward(d3, model, f"{prefix}.gb4")
    fused = conv2d(channel_concat([s1, s2, s3, s4, x]), model.conv(f"{prefix}.fuse"), name=f"{prefix}.fuse")
    return leaky_relu(fused)


def model_forward(model: Model, lr: np.ndarray) -> np.ndarray:
    """Map an ``(n, 3, h, w)`` batch in [0, 1] to ``(n, 3, h*s, w*s)``."""
    cfg = model.config
    if shape_of(lr).c != cfg.in_channels:
        raise ShapeError(f"input must have {cfg.in_channels} channels, got {lr.shape[1]}")
    f0 = conv2d(lr, model.conv("head"), name="head")
    kept = []
    d = f0
    for n in range(1, NUM_GIDB):
        s, d = channel_split(gidb_forward(d, model, f"gidb{n}"), cfg.distill)
        kept.append(s)
        if cfg.use_nla and n in NLA_AFTER:
            d = nla_block(d, model.conv(f"nla{n}.value"), model.conv(f"nla{n}.out"),
                          tile=cfg.nla_tile, name=f"nla{n}")
    kept.append(gidb_forward(d, model, f"gidb{NUM_GIDB}"))
    f7 = channel_concat(kept)
    f8 = leaky_relu(conv2d(f7, model.conv("tail.h1x1"), name="tail.h1x1"))
    f9 = leaky_relu(conv2d(f8, model.conv("tail.h3x3"), name="tail.h3x3"))
    if cfg.has_long_residual:
        f9 = add(f9, f0)
    return depth_to_space(conv2d(f9, model.conv("upsample"), name="upsample"), cfg.scale)
