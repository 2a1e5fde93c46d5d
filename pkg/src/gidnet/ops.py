"""Neural operators with forward and vector-Jacobian rules.

Every forward function records itself on the active :class:`GradientTape`
so that composite networks can be differentiated; the explicit ``*_backward``
functions are the same rules exposed for direct use and testing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import GradientTape, record
from .errors import NonFiniteError, ShapeError
from .tensor import add, check_finite, shape_of

LEAKY_SLOPE = 0.05


@dataclass
class ConvParams:
    """Weights of a stride-1, same-padded convolution.

    ``weight`` has shape ``(out_c, in_c // groups, k, k)``; ``bias`` has length ``out_c``.
    """

    weight: np.ndarray
    bias: np.ndarray
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be rank 4, got {self.weight.shape}")
        out_c, _, kh, kw = self.weight.shape
        if kh != kw or kh not in (1, 3):
            raise ShapeError(f"kernel must be 1x1 or 3x3, got {kh}x{kw}")
        if self.groups < 1 or out_c % self.groups:
            raise ShapeError(f"out_c={out_c} not divisible by groups={self.groups}")
        if self.bias.shape != (out_c,):
            raise ShapeError(f"bias shape {self.bias.shape} != ({out_c},)")

    @property
    def k(self) -> int:
        return self.weight.shape[2]

    @property
    def padding(self) -> int:
        return (self.k - 1) // 2

    @property
    def in_c(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def out_c(self) -> int:
        return self.weight.shape[0]


def _columns(x: np.ndarray, k: int, groups: int) -> np.ndarray:
    """Unfold ``x`` into ``(n, groups, h*w, c_per_group*k*k)`` patches."""
    n, c, h, w = x.shape
    cg = c // groups
    if k == 1:
        return x.reshape(n, groups, cg, h * w).transpose(0, 1, 3, 2)
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # n, c, h, w, k, k
    win = win.reshape(n, groups, cg, h, w, k, k).transpose(0, 1, 3, 4, 2, 5, 6)
    return win.reshape(n, groups, h * w, cg * k * k)


def _weight_matrix(p: ConvParams) -> np.ndarray:
    out_c, cg, k, _ = p.weight.shape
    g = p.groups
    return p.weight.reshape(g, out_c // g, cg * k * k).transpose(0, 2, 1)


def _check_conv_input(x: np.ndarray, p: ConvParams):
    c = shape_of(x).c
    if c != p.in_c:
        raise ShapeError(f"conv2d: input has {c} channels, weights expect {p.in_c}")


def conv2d(x: np.ndarray, p: ConvParams, name: str = "conv2d") -> np.ndarray:
    _check_conv_input(x, p)
    n, _, h, w = x.shape
    out = _columns(x, p.k, p.groups) @ _weight_matrix(p)  # n, g, hw, og
    out = out.transpose(0, 1, 3, 2).reshape(n, p.out_c, h, w)
    out = out + p.bias.reshape(1, -1, 1, 1)
    check_finite(out, name)

    def back(g):
        return conv2d_backward(x, p, g)

    record("conv2d", (x, p.weight, p.bias), out, back)
    return out


def conv2d_backward(x: np.ndarray, p: ConvParams, grad_out: np.ndarray):
    """Return ``(grad_x, grad_weight, grad_bias)`` for a forward ``conv2d(x, p)``."""
    _check_conv_input(x, p)
    n, c, h, w = x.shape
    if grad_out.shape != (n, p.out_c, h, w):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(n, p.out_c, h, w)}")
    g, k, pad = p.groups, p.k, p.padding
    cg = c // g
    go = grad_out.reshape(n, g, p.out_c // g, h * w).transpose(0, 1, 3, 2)
    cols = _columns(x, k, g)

    grad_w = (cols.transpose(0, 1, 3, 2) @ go).sum(axis=0)  # g, cg*k*k, og
    grad_w = grad_w.transpose(0, 2, 1).reshape(p.weight.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))

    gcols = go @ _weight_matrix(p).transpose(0, 2, 1)  # n, g, hw, cg*k*k
    if k == 1:
        grad_x = gcols.transpose(0, 1, 3, 2).reshape(n, c, h, w)
    else:
        gcols = gcols.reshape(n, g, h, w, cg, k, k).transpose(0, 1, 4, 5, 6, 2, 3)
        gcols = gcols.reshape(n, c, k, k, h, w)
        gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=grad_out.dtype)
        for ky in range(k):
            for kx in range(k):
                gxp[:, :, ky:ky + h, kx:kx + w] += gcols[:, :, ky, kx]
        grad_x = gxp[:, :, pad:pad + h, pad:pad + w].copy()
    return grad_x, grad_w.astype(p.weight.dtype), grad_b.astype(p.bias.dtype)


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    if not 0 < slope < 1:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    out = np.where(x >= 0, x, x * x.dtype.type(slope))
    check_finite(out, "leaky_relu")
    record("leaky_relu", (x,), out, lambda g: (leaky_relu_backward(x, g, slope),))
    return out


def leaky_relu_backward(x: np.ndarray, grad_out: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    # x == 0 takes the positive branch.
    return np.where(x >= 0, grad_out, grad_out * grad_out.dtype.type(slope))


def relu(x: np.ndarray) -> np.ndarray:
    out = np.maximum(x, 0)
    check_finite(out, "relu")
    record("relu", (x,), out, lambda g: (relu_backward(x, g),))
    return out


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype)


def depth_to_space(x: np.ndarray, r: int) -> np.ndarray:
    """``out[n, c, h*r + i, w*r + j] = x[n, c*r*r + i*r + j, h, w]``."""
    n, c, h, w = shape_of(x)
    if r < 1 or c % (r * r):
        raise ShapeError(f"depth_to_space: {c} channels not divisible by {r}^2")
    co = c // (r * r)
    out = x.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)
    out = np.ascontiguousarray(out)
    if out is x:
        out = x.copy()
    record("depth_to_space", (x,), out, lambda g: (space_to_depth(g, r, _record=False),))
    return out


def space_to_depth(x: np.ndarray, r: int, _record: bool = True) -> np.ndarray:
    n, c, h, w = shape_of(x)
    if r < 1 or h % r or w % r:
        raise ShapeError(f"space_to_depth: {h}x{w} not divisible by {r}")
    out = x.reshape(n, c, h // r, r, w // r, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h // r, w // r)
    out = np.ascontiguousarray(out)
    if out is x:
        out = x.copy()
    if _record:
        record("space_to_depth", (x,), out, lambda g: (depth_to_space_backward(g, r),))
    return out


def depth_to_space_backward(grad_out: np.ndarray, r: int) -> np.ndarray:
    return space_to_depth(grad_out, r, _record=False)


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-subtracted softmax along ``axis``."""
    z = np.exp(v - v.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def zero_pad(x: np.ndarray, top: int, bottom: int, left: int, right: int) -> np.ndarray:
    if min(top, bottom, left, right) < 0:
        raise ValueError("padding amounts must be nonnegative")
    n, c, h, w = shape_of(x)
    out = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))
    if out is x:
        out = x.copy()

    def back(g):
        return (g[:, :, top:top + h, left:left + w],)

    record("zero_pad", (x,), out, back)
    return out


# ----------------------------------------------------------------------------
# Block-based non-local attention


def tile_regions(h: int, w: int, b: int):
    """Yield ``(y0, y1, x0, x1, th, tw)``: rectangles tiled by equal ``th x tw`` tiles.

    Full ``b x b`` tiles cover the top-left; border strips get the remainder size.
    """
    hf, wf = (h // b) * b, (w // b) * b
    rows = [(0, hf, b)] if hf else []
    if hf < h:
        rows.append((hf, h, h - hf))
    cols = [(0, wf, b)] if wf else []
    if wf < w:
        cols.append((wf, w, w - wf))
    for y0, y1, th in rows:
        for x0, x1, tw in cols:
            yield y0, y1, x0, x1, th, tw


def _to_tokens(t: np.ndarray, th: int, tw: int) -> np.ndarray:
    n, c, h, w = t.shape
    t = t.reshape(n, c, h // th, th, w // tw, tw).transpose(0, 2, 4, 3, 5, 1)
    return t.reshape(n, (h // th) * (w // tw), th * tw, c)


def _from_tokens(tok: np.ndarray, h: int, w: int, th: int, tw: int) -> np.ndarray:
    n, _, _, c = tok.shape
    t = tok.reshape(n, h // th, w // tw, th, tw, c).transpose(0, 5, 1, 3, 2, 4)
    return t.reshape(n, c, h, w)


def tile_affinities(x: np.ndarray, tile: int):
    """Yield ``(region, A)`` per uniformly tiled region.

    ``region`` is ``(y0, y1, x0, x1, th, tw)``; ``A`` has shape ``(n, tiles, P, P)``
    with ``P = th*tw`` and rows summing to one.
    """
    c = shape_of(x).c
    scale = 1.0 / math.sqrt(c)
    for y0, y1, x0, x1, th, tw in tile_regions(x.shape[2], x.shape[3], tile):
        tok = _to_tokens(x[:, :, y0:y1, x0:x1], th, tw)
        a = softmax((tok @ tok.transpose(0, 1, 3, 2)) * x.dtype.type(scale))
        yield (y0, y1, x0, x1, th, tw), a


def tile_attention(x: np.ndarray, v: np.ndarray, tile: int) -> np.ndarray:
    """Aggregate ``v`` inside each tile with softmax(x_i . x_j / sqrt(c)) weights."""
    if x.shape != v.shape:
        raise ShapeError(f"tile_attention: x {x.shape} and v {v.shape} differ")
    if tile < 1:
        raise ValueError("tile size must be >= 1")
    out = np.empty_like(v)
    saved = []
    for (y0, y1, x0, x1, th, tw), a in tile_affinities(x, tile):
        vt = _to_tokens(v[:, :, y0:y1, x0:x1], th, tw)
        out[:, :, y0:y1, x0:x1] = _from_tokens(a @ vt, y1 - y0, x1 - x0, th, tw)
        saved.append((y0, y1, x0, x1, th, tw, a))
    check_finite(out, "tile_attention")

    def back(g):
        return tile_attention_backward(x, v, saved, g)

    record("tile_attention", (x, v), out, back)
    return out


def tile_attention_backward(x, v, saved, grad_out):
    c = x.shape[1]
    scale = x.dtype.type(1.0 / math.sqrt(c))
    gx = np.zeros_like(x)
    gv = np.zeros_like(v)
    for y0, y1, x0, x1, th, tw, a in saved:
        hh, ww = y1 - y0, x1 - x0
        xt = _to_tokens(x[:, :, y0:y1, x0:x1], th, tw)
        vt = _to_tokens(v[:, :, y0:y1, x0:x1], th, tw)
        gt = _to_tokens(grad_out[:, :, y0:y1, x0:x1], th, tw)
        ga = gt @ vt.transpose(0, 1, 3, 2)
        gvt = a.transpose(0, 1, 3, 2) @ gt
        gs = a * (ga - (ga * a).sum(axis=-1, keepdims=True))
        gxt = (gs + gs.transpose(0, 1, 3, 2)) @ xt * scale
        gx[:, :, y0:y1, x0:x1] = _from_tokens(gxt, hh, ww, th, tw)
        gv[:, :, y0:y1, x0:x1] = _from_tokens(gvt, hh, ww, th, tw)
    return gx, gv


def nla_block(x: np.ndarray, value: ConvParams, out: ConvParams, tile: int = 16,
              name: str = "nla") -> np.ndarray:
    """Tile-local non-local attention with a residual connection.

    ``out(attend(x, value(x))) + x`` where attention weights use raw features.
    """
    c = shape_of(x).c
    for p in (value, out):
        if p.k != 1 or p.in_c != c or p.out_c != c:
            raise ShapeError(f"{name}: transforms must be 1x1 {c}->{c} convolutions")
    v = conv2d(x, value, name=f"{name}.value")
    agg = tile_attention(x, v, tile)
    return add(conv2d(agg, out, name=f"{name}.out"), x)


# ----------------------------------------------------------------------------
# Finite-difference gradient oracle


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_input: list = field(default_factory=list)
    tol: float = 1e-3

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol


def grad_check(op: Callable[..., np.ndarray], inputs: Sequence[np.ndarray], eps: float = 1e-3,
               tol: float = 1e-3, seed: int = 0, max_probes: int = 64,
               dtype=np.float64) -> GradCheckReport:
    """Compare tape gradients of ``sum(op(*inputs) * r)`` with central differences.

    ``r`` is a fixed random cotangent. The error for one input is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` over at most
    ``max_probes`` randomly chosen elements. Inputs are cast to ``dtype``.
    """
    rng = np.random.default_rng(seed)
    xs = [np.array(a, dtype=dtype) for a in inputs]
    with GradientTape() as tape:
        out = op(*xs)
    cot = rng.standard_normal(out.shape).astype(dtype)
    analytic = tape.gradient(out, cot, xs)

    def probe(args):
        y = op(*args)
        if not np.isfinite(y).all():
            raise NonFiniteError("grad_check: non-finite output")
        return float((y.astype(np.float64) * cot).sum())

    errs = []
    for i, x in enumerate(xs):
        idx = np.arange(x.size)
        if x.size > max_probes:
            idx = rng.choice(x.size, max_probes, replace=False)
        num = np.empty(len(idx))
        ana = analytic[i].reshape(-1)[idx].astype(np.float64)
        for j, flat in enumerate(idx):
            plus = [a.copy() for a in xs]
            minus = [a.copy() for a in xs]
            plus[i].reshape(-1)[flat] += eps
            minus[i].reshape(-1)[flat] -= eps
            num[j] = (probe(plus) - probe(minus)) / (2 * eps)
        scale = max(np.abs(ana).max(), np.abs(num).max())
        errs.append(0.0 if scale == 0 else float(np.abs(ana - num).max() / scale))
    return GradCheckReport(max(errs) if errs else 0.0, errs, tol)


def grad_check_scalar(f: Callable[[np.ndarray], float], grad_f: Callable[[np.ndarray], np.ndarray],
                      x: np.ndarray, eps: float = 1e-3, seed: int = 0, max_probes: int = 64) -> float:
    """Relative error of ``grad_f(x)`` against central differences of scalar ``f``."""
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    ana = grad_f(x).reshape(-1)
    idx = np.arange(x.size) if x.size <= max_probes else rng.choice(x.size, max_probes, replace=False)
    num = np.empty(len(idx))
    for j, flat in enumerate(idx):
        xp, xm = x.copy(), x.copy()
        xp.reshape(-1)[flat] += eps
        xm.reshape(-1)[flat] -= eps
        num[j] = (f(xp) - f(xm)) / (2 * eps)
    ana = ana[idx]
    scale = max(np.abs(ana).max(), np.abs(num).max())
    return 0.0 if scale == 0 else float(np.abs(ana - num).max() / scale)
