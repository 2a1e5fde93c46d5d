"""Rank-4 NCHW tensors.

Tensors are plain ``numpy`` arrays of shape ``(n, c, h, w)``; element
``(n, c, h, w)`` lives at flat index ``((n*C + c)*H + h)*W + w`` (C order).
The helpers here validate extents and record themselves on the active
gradient tape.
"""
from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .autodiff import record
from .errors import NonFiniteError, ShapeError

DTYPE = np.float32
_MAX_ELEMENTS = np.iinfo(np.intp).max


class Shape(NamedTuple):
    n: int
    c: int
    h: int
    w: int

    @property
    def size(self) -> int:
        return self.n * self.c * self.h * self.w


def as_shape(shape) -> Shape:
    if len(shape) != 4:
        raise ShapeError(f"expected 4 extents, got {tuple(shape)}")
    dims = []
    for d in shape:
        if int(d) != d or d < 1:
            raise ShapeError(f"extents must be positive integers, got {tuple(shape)}")
        dims.append(int(d))
    s = Shape(*dims)
    if s.size > _MAX_ELEMENTS:
        raise ShapeError(f"element count of {tuple(s)} overflows")
    return s


def shape_of(t: np.ndarray) -> Shape:
    if t.ndim != 4:
        raise ShapeError(f"expected a rank-4 tensor, got shape {t.shape}")
    return Shape(*t.shape)


def flat_index(shape: Shape, n: int, c: int, h: int, w: int) -> int:
    return ((n * shape.c + c) * shape.h + h) * shape.w + w


def check_finite(t: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(t).all():
        raise NonFiniteError(f"{what} produced non-finite values")
    return t


def tensor_full(shape, value, dtype=DTYPE) -> np.ndarray:
    return np.full(as_shape(shape), value, dtype=dtype)


def channel_split(t: np.ndarray, retained: int) -> tuple[np.ndarray, np.ndarray]:
    """Split into (first ``retained`` channels, remaining channels)."""
    c = shape_of(t).c
    if not 0 < retained < c:
        raise ShapeError(f"retained={retained} must lie in (0, {c})")
    head = t[:, :retained].copy()
    tail = t[:, retained:].copy()

    def back_head(g):
        out = np.zeros_like(t)
        out[:, :retained] = g
        return (out,)

    def back_tail(g):
        out = np.zeros_like(t)
        out[:, retained:] = g
        return (out,)

    record("channel_split", (t,), head, back_head)
    record("channel_split", (t,), tail, back_tail)
    return head, tail


def channel_concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("channel_concat needs at least one part")
    shapes = [shape_of(p) for p in parts]
    n, _, h, w = shapes[0]
    for s in shapes[1:]:
        if (s.n, s.h, s.w) != (n, h, w):
            raise ShapeError(f"cannot concatenate {[tuple(s) for s in shapes]}: batch/spatial mismatch")
    out = np.concatenate(parts, axis=1)
    bounds = np.cumsum([0] + [s.c for s in shapes])

    def back(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    record("channel_concat", tuple(parts), out, back)
    return out


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    shape_of(a)
    out = check_finite(a + b, "add")
    record("add", (a, b), out, lambda g: (g, g))
    return out
