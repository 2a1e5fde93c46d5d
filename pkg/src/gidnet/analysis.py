"""Structural complexity counters: parameters, MACs, activations, conv layers.

Every convolution is stride 1 with same padding, so each layer runs at the
input resolution and its multiply-accumulates equal ``params * h * w``
(bias adds counted as one MAC each). Activations count convolution outputs
of the main path; the 1x1 transforms inside attention blocks are excluded.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .model import Model, ModelConfig, layer_specs
from .ops import tile_regions

REFERENCE_SIZE = (256, 256)


@dataclass
class LayerRow:
    name: str
    params: int
    out_channels: int
    macs: int
    activations: int


@dataclass
class ComplexityReport:
    config: ModelConfig
    height: int
    width: int
    params: int
    macs: int
    activations: int
    convs: int
    attention_macs: int = 0
    rows: list[LayerRow] = field(default_factory=list)

    def to_text(self) -> str:
        w = max(len(r.name) for r in self.rows)
        lines = [f"{'layer':<{w}}  {'params':>9}  {'out_c':>5}  {'macs':>14}  {'acts':>11}"]
        for r in self.rows:
            lines.append(f"{r.name:<{w}}  {r.params:>9,}  {r.out_channels:>5}  {r.macs:>14,}  {r.activations:>11,}")
        lines.append("")
        lines.append(f"input size      {self.height}x{self.width}")
        lines.append(f"params          {self.params:,} ({self.params / 1e3:.1f}K)")
        lines.append(f"macs            {self.macs:,} ({self.macs / 1e9:.2f}G)")
        lines.append(f"activations     {self.activations:,} ({self.activations / 1e6:.1f}M)")
        lines.append(f"convs           {self.convs}")
        if self.attention_macs:
            lines.append(f"attention macs  {self.attention_macs:,} ({self.attention_macs / 1e9:.2f}G)")
        return "\n".join(lines)

    def to_kv(self) -> str:
        cfg = self.config
        items = [
            ("core", cfg.core), ("nla", int(cfg.use_nla)), ("scale", cfg.scale),
            ("height", self.height), ("width", self.width),
            ("params", self.params), ("macs", self.macs),
            ("activations", self.activations), ("convs", self.convs),
            ("attention_macs", self.attention_macs),
        ]
        return "\n".join(f"{k}={v}" for k, v in items)


def _config(m: Model | ModelConfig) -> ModelConfig:
    return m.config if isinstance(m, Model) else m


def count_parameters(m: Model | ModelConfig) -> int:
    if isinstance(m, Model):
        return sum(int(p.size) for p in m.params.values())
    return sum(s.params for s in layer_specs(m))


def count_macs(m: Model | ModelConfig, h: int, w: int) -> int:
    _check_size(h, w)
    return sum(s.params for s in layer_specs(_config(m))) * h * w


def count_activations(m: Model | ModelConfig, h: int, w: int, include_attention: bool = False) -> int:
    _check_size(h, w)
    return sum(s.out_c for s in layer_specs(_config(m)) if include_attention or not s.attention) * h * w


def count_convs(m: Model | ModelConfig) -> int:
    return len(layer_specs(_config(m)))


def count_attention_macs(m: Model | ModelConfig, h: int, w: int) -> int:
    """Affinity and aggregation matrix products of all attention blocks."""
    _check_size(h, w)
    cfg = _config(m)
    if not cfg.use_nla:
        return 0
    per_block = 0
    for y0, y1, x0, x1, th, tw in tile_regions(h, w, cfg.nla_tile):
        tiles = ((y1 - y0) // th) * ((x1 - x0) // tw)
        p = th * tw
        per_block += tiles * 2 * p * p * cfg.coarse
    blocks = sum(1 for s in layer_specs(cfg) if s.name.endswith(".value"))
    return blocks * per_block


def complexity_report(m: Model | ModelConfig, h: int = REFERENCE_SIZE[0], w: int = REFERENCE_SIZE[1],
                      attention: bool = False) -> ComplexityReport:
    cfg = _config(m)
    _check_size(h, w)
    rows = [
        LayerRow(s.name, s.params, s.out_c, s.params * h * w, 0 if s.attention else s.out_c * h * w)
        for s in layer_specs(cfg)
    ]
    return ComplexityReport(
        config=cfg, height=h, width=w,
        params=sum(r.params for r in rows),
        macs=sum(r.macs for r in rows),
        activations=sum(r.activations for r in rows),
        convs=len(rows),
        attention_macs=count_attention_macs(cfg, h, w) if attention else 0,
        rows=rows,
    )


def _check_size(h: int, w: int):
    if h < 1 or w < 1:
        raise ValueError(f"input size must be positive, got {h}x{w}")
