"""Self-verification suites: operator oracles, complexity counters, gradient checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import analysis
from .model import ModelConfig
from .ops import (ConvParams, conv2d, depth_to_space, grad_check, grad_check_scalar, leaky_relu, nla_block, relu,
                  space_to_depth, tile_affinities)
from .tensor import channel_concat, channel_split
from .training import charbonnier_backward, charbonnier_loss, l2_backward, l2_loss

# (core, nla) -> published params, GFLOPS, Mact, convs
PUBLISHED_COMPLEXITY = {
    (16, True): (316e3, 20.7, 206, 62),
    (12, False): (198e3, 12.9, 149, 58),
    (8, False): (113e3, 7.4, 103, 58),
    (4, True): (57e3, 3.7, 57, 62),
    (4, False): (57e3, 3.7, 57, 58),
}
REF_H, REF_W = analysis.REFERENCE_SIZE


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}: {self.name} {self.detail}".rstrip()


def reference_conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Dense same-padded convolution by shifted-slice accumulation."""
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    p = (k - 1) // 2
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((n, o, h, w)) + bias.reshape(1, -1, 1, 1)
    for ky in range(k):
        for kx in range(k):
            patch = xp[:, :, ky:ky + h, kx:kx + w]
            out += np.einsum("nchw,oc->nohw", patch, weight[:, :, ky, kx].astype(np.float64))
    return out


def grouped_by_dense(x: np.ndarray, p: ConvParams) -> np.ndarray:
    """Grouped convolution as independent dense convolutions on channel blocks."""
    g = p.groups
    cg = x.shape[1] // g
    og = p.out_c // g
    outs = [reference_conv2d(x[:, i * cg:(i + 1) * cg], p.weight[i * og:(i + 1) * og], p.bias[i * og:(i + 1) * og])
            for i in range(g)]
    return np.concatenate(outs, axis=1)


def _random_conv(rng, in_c, out_c, k, groups, dtype=np.float32):
    w = rng.uniform(-1, 1, (out_c, in_c // groups, k, k)).astype(dtype)
    b = rng.uniform(-1, 1, out_c).astype(dtype)
    return ConvParams(w, b, groups)


def grouped_conv_cases(n_cases: int = 20, seed: int = 0) -> Iterator[float]:
    """Max abs diff of ``conv2d(groups=4)`` vs the per-group dense oracle per case."""
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        cg = int(rng.integers(1, 5))
        og = int(rng.integers(1, 5))
        h, w = (int(v) for v in rng.integers(1, 10, 2))
        x = rng.uniform(-1, 1, (int(rng.integers(1, 3)), 4 * cg, h, w)).astype(np.float32)
        p = _random_conv(rng, 4 * cg, 4 * og, int(rng.choice([1, 3])), 4)
        yield float(np.abs(conv2d(x, p) - grouped_by_dense(x, p)).max())


def suite_ops(seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    x = rng.standard_normal((2, 12, 5, 7)).astype(np.float32)
    ok = all(np.array_equal(channel_concat(list(channel_split(x, k))), x) for k in range(1, 12))
    checks.append(Check("ops", "split/concat round trip", ok))
    y = rng.standard_normal((1, 48, 7, 5)).astype(np.float32)
    checks.append(Check("ops", "depth_to_space round trip", bool(np.array_equal(space_to_depth(depth_to_space(y, 4), 4), y))))
    diffs = list(grouped_conv_cases(20, seed))
    checks.append(Check("ops", "grouped conv vs dense oracle", max(diffs) <= 1e-5, f"max abs diff {max(diffs):.2e}"))
    a = rng.standard_normal((1, 8, 7, 9)).astype(np.float32)
    worst = max(float(np.abs(A.sum(-1) - 1).max()) for _, A in tile_affinities(a, 4))
    checks.append(Check("ops", "attention rows stochastic", worst <= 1e-6, f"max |row sum - 1| {worst:.2e}"))
    return checks


def suite_counters() -> list[Check]:
    checks = []
    for (core, nla), (p_ref, g_ref, a_ref, c_ref) in PUBLISHED_COMPLEXITY.items():
        cfg = ModelConfig(core=core, use_nla=nla)
        tag = f"core={core}{'+NLA' if nla else ''}"
        convs = analysis.count_convs(cfg)
        params = analysis.count_parameters(cfg)
        macs = analysis.count_macs(cfg, REF_H, REF_W)
        acts = analysis.count_activations(cfg, REF_H, REF_W)
        checks.append(Check("counters", f"{tag} convs", convs == c_ref, f"{convs} (published {c_ref})"))
        checks.append(Check("counters", f"{tag} params", abs(params / p_ref - 1) <= 0.05, f"{params:,} (published {p_ref / 1e3:.0f}K)"))
        checks.append(Check("counters", f"{tag} macs identity", macs == params * REF_H * REF_W))
        checks.append(Check("counters", f"{tag} GFLOPS", abs(macs / 1e9 / g_ref - 1) <= 0.10, f"{macs / 1e9:.2f} (published {g_ref})"))
        checks.append(Check("counters", f"{tag} activations", abs(acts / 1e6 / a_ref - 1) <= 0.06, f"{acts / 1e6:.1f}M (published {a_ref}M)"))
    return checks


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(-1, 1, shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


GRAD_SHAPES = [(1, 4, 4, 4), (2, 8, 3, 5), (1, 12, 6, 2)]


def grad_cases(seed: int = 0) -> Iterator[tuple[str, float]]:
    """Yield ``(operator, relative error)`` for every backward rule on 3 shapes each."""
    rng = np.random.default_rng(seed)
    for shape in GRAD_SHAPES:
        n, c, h, w = shape
        x = rng.uniform(-1, 1, shape)
        for label, k, groups in (("conv2d dense 3x3", 3, 1), ("conv2d dense 1x1", 1, 1), ("conv2d grouped", 3, 4)):
            p = _random_conv(rng, c, c, k, groups, np.float64)
            rep = grad_check(lambda x, wt, b, g=groups: conv2d(x, ConvParams(wt, b, g)), [x, p.weight, p.bias])
            yield label, rep.max_rel_err
        xa = _away_from_zero(rng, shape)
        yield "leaky_relu", grad_check(leaky_relu, [xa]).max_rel_err
        yield "relu", grad_check(relu, [xa]).max_rel_err
        yield "depth_to_space", grad_check(lambda t: depth_to_space(t, 2), [rng.uniform(-1, 1, (n, 4 * c, h, w))]).max_rel_err
        v, o = _random_conv(rng, c, c, 1, 1, np.float64), _random_conv(rng, c, c, 1, 1, np.float64)
        rep = grad_check(lambda x, a, b, cc, d: nla_block(x, ConvParams(a, b), ConvParams(cc, d), tile=2),
                         [x, v.weight, v.bias, o.weight, o.bias])
        yield "nla_block", rep.max_rel_err
        target = rng.uniform(0, 1, shape)
        yield "charbonnier", grad_check_scalar(lambda p: charbonnier_loss(p, target, 0.1),
                                              lambda p: charbonnier_backward(p, target, 0.1), rng.uniform(0, 1, shape))
        yield "l2", grad_check_scalar(lambda p: l2_loss(p, target), lambda p: l2_backward(p, target),
                                     rng.uniform(0, 1, shape))


def suite_grad(seed: int = 0, tol: float = 1e-3) -> list[Check]:
    worst: dict[str, list[float]] = {}
    for name, err in grad_cases(seed):
        worst.setdefault(name, []).append(err)
    return [Check("grad", name, max(errs) <= tol, f"{len(errs)} shapes, max rel err {max(errs):.2e}")
            for name, errs in worst.items()]


SUITES: dict[str, Callable[[], list[Check]]] = {
    "ops": suite_ops,
    "counters": suite_counters,
    "grad": suite_grad,
}


def run(suites=("ops", "counters", "grad")) -> list[Check]:
    out = []
    for s in suites:
        out.extend(SUITES[s]())
    return out
