"""Segment checkpointing: store boundaries, re-execute once during backward.

``checkpoint(fn, *inputs)`` evaluates ``fn`` with recording suppressed, so
the tape keeps only the boundary inputs and outputs.  When the backward
sweep reaches the checkpoint node, the segment is re-executed exactly once
under a fresh sub-tape, differentiated, and the sub-tape is released
immediately, which is what keeps peak tape memory flat across a long chain
of segments.

``fn`` must be pure with respect to its tensor inputs: re-execution must
reproduce the stored outputs bit-for-bit, which is verified and raises
:class:`ImpureSegment` otherwise.  Side effects on counters (e.g. model
call meters) are expected and are precisely how re-execution cost stays
visible.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .ops import _parent_ref
from .tape import (ImpureSegment, Tape, Tensor, active_tape,
                   pop_eager_guard, push_eager_guard)

__all__ = ["checkpoint"]


def _run_eager(fn: Callable, input_values: tuple[np.ndarray, ...]):
    push_eager_guard()
    try:
        return fn(*[Tensor(v) for v in input_values])
    finally:
        pop_eager_guard()


def _as_output_tuple(raw) -> tuple[Tensor, ...]:
    if isinstance(raw, Tensor):
        return (raw,)
    if isinstance(raw, (tuple, list)) and all(isinstance(o, Tensor) for o in raw):
        return tuple(raw)
    raise TypeError("checkpointed segment must return a Tensor or a tuple of Tensors")


def checkpoint(fn: Callable, *inputs, check_purity: bool = True):
    """Run ``fn(*inputs)`` as a single tape node with deferred differentiation.

    Returns whatever ``fn`` returns (Tensor or tuple of Tensors).  Under no
    tape this is just an eager call.  Gradients flow only to ``inputs``;
    values ``fn`` closes over are treated as constants.
    """
    in_tensors = tuple(Tensor(i) if not isinstance(i, Tensor) else i for i in inputs)
    in_values = tuple(t.values for t in in_tensors)

    raw = _run_eager(fn, in_values)
    outputs = _as_output_tuple(raw)
    out_values = tuple(o.values for o in outputs)

    tape = active_tape()
    if tape is None:
        return raw

    parents = tuple(_parent_ref(tape, t) for t in in_tensors)
    if all(p is None for p in parents):
        return raw

    def vjp(gs):
        leaves = [Tensor(v, requires_grad=True) for v in in_values]
        with Tape() as sub:
            re_raw = fn(*leaves)
        re_outputs = _as_output_tuple(re_raw)
        if len(re_outputs) != len(out_values):
            sub.release()
            raise ImpureSegment("segment output arity changed on re-execution")
        if check_purity:
            for saved, redone in zip(out_values, re_outputs):
                if saved.tobytes() != redone.values.tobytes():
                    sub.release()
                    raise ImpureSegment(
                        "segment outputs changed on re-execution; "
                        "checkpointed functions must be pure in their inputs")
        seeds = [(o, g) for o, g in zip(re_outputs, gs) if g is not None]
        leaf_grads = sub.run_backward(seeds, accumulate_leaf_grads=False)
        sub.release()
        grads = []
        for leaf in leaves:
            if leaf.node is not None and leaf.node in leaf_grads:
                grads.append(leaf_grads[leaf.node])
            else:
                grads.append(None)
        return tuple(grads)

    node = tape.record("checkpoint", parents, vjp, out_values)
    for i, out in enumerate(outputs):
        out.tape, out.node, out.slot = tape, node, i
    return raw
