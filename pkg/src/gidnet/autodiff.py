"""Reverse-mode gradient tape.

Operators record ``(inputs, output, backward)`` triples on the active tape of
the calling thread. ``backward`` maps the cotangent of ``output`` to a tuple of
cotangents aligned with ``inputs`` (``None`` for inputs that need no gradient).
Arrays are identified by object identity, so operators must always return a
fresh array object, never one of their inputs.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

_local = threading.local()


@dataclass
class Record:
    op: str
    inputs: tuple
    output: np.ndarray
    backward: Callable


class GradientTape:
    """Records operator applications while active as a context manager.

    >>> with GradientTape() as tape:
    ...     y = some_op(x)
    >>> (gx,) = tape.gradient(y, np.ones_like(y), [x])
    """

    def __init__(self):
        self.records: list[Record] = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, op, inputs, output, backward):
        self.records.append(Record(op, tuple(inputs), output, backward))

    def gradient(self, output: np.ndarray, grad_output: np.ndarray,
                 sources: Sequence[np.ndarray]) -> list[np.ndarray]:
        """Accumulate d<output, grad_output>/d source for every source.

        Sources never reached by the tape get zero gradients.
        """
        if grad_output.shape != output.shape:
            raise ValueError(f"cotangent shape {grad_output.shape} != output shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): grad_output}
        for rec in reversed(self.records):
            g = grads.get(id(rec.output))
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or inp is None:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(s), np.zeros_like(s)) for s in sources]


def active_tape() -> GradientTape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def record(op: str, inputs, output, backward) -> None:
    tape = active_tape()
    if tape is not None:
        tape.record(op, inputs, output, backward)
