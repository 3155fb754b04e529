"""Tape-based reverse-mode automatic differentiation on numpy arrays.

A ``Tape`` records every primitive operation executed while it is active.
``backward`` replays the records in reverse, calling each node's
vector-Jacobian product exactly once.  Gradients accumulate by summation
when a value fans out to several consumers.

Design constraints honoured here:

* eager numpy forward values at every node, no lazy graphs;
* a node is recorded only if at least one input is connected to the
  active tape (pure-constant subgraphs cost nothing);
* non-finite loss values or gradients raise instead of propagating NaN;
* memory accounting charges only tape-owned arrays (node outputs and
  registered leaves) to the active :class:`~noiselab.gradkit.meter.CostMeter`.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GradkitError",
    "ShapeMismatch",
    "UnknownOp",
    "DetachedGraph",
    "NonScalarLoss",
    "NonFiniteValue",
    "ImpureSegment",
    "Tensor",
    "Tape",
    "active_tape",
    "backward",
]


class GradkitError(Exception):
    """Base class for autodiff failures."""


class ShapeMismatch(GradkitError):
    pass


class UnknownOp(GradkitError):
    pass


class DetachedGraph(GradkitError):
    """Raised when backward() is called on a tensor with no tape history."""


class NonScalarLoss(GradkitError):
    pass


class NonFiniteValue(GradkitError):
    """A loss or gradient contained NaN or +/-inf."""


class ImpureSegment(GradkitError):
    """A checkpointed segment did not reproduce its outputs on re-execution."""


_state = threading.local()


def _tape_stack() -> list:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = []
        _state.tapes = stack
    return stack


def active_tape() -> "Tape | None":
    """The innermost recording tape, or None when running eagerly."""
    stack = _tape_stack()
    for tape in reversed(stack):
        if tape is _EAGER_GUARD:
            return None
        return tape
    return None


def push_eager_guard() -> None:
    # Used by checkpoint() so a segment's first execution records nothing,
    # even when an outer tape is active.
    _tape_stack().append(_EAGER_GUARD)


def pop_eager_guard() -> None:
    top = _tape_stack().pop()
    if top is not _EAGER_GUARD:
        raise GradkitError("eager guard stack corrupted")


class Tensor:
    """A numpy array plus optional tape provenance.

    ``values`` is always a concrete ``np.ndarray``.  ``tape``/``node``/``slot``
    locate the producing record when the tensor was made under a recording
    tape; they are None for constants and for eager results.  Leaves created
    with ``requires_grad=True`` receive their gradient in ``.grad`` after
    ``backward``.
    """

    __slots__ = ("values", "tape", "node", "slot", "requires_grad", "grad")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values)
        self.tape: Tape | None = None
        self.node: int | None = None
        self.slot: int = 0
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def __repr__(self) -> str:
        tag = "leaf" if self.requires_grad and self.node is None else (
            "rec" if self.tape is not None else "const")
        return f"Tensor(shape={self.values.shape}, dtype={self.values.dtype}, {tag})"

    # -- operator sugar (defined in ops.py, attached below) ------------
    # __add__/__mul__/... are monkey-patched by noiselab.gradkit.ops to keep
    # the primitive registry in one module.


class Node:
    """One recorded primitive: parents, saved outputs, and a vjp closure."""

    __slots__ = ("op", "parents", "vjp", "n_out", "nbytes", "is_leaf", "leaf_ref")

    def __init__(self, op: str, parents: tuple, vjp: Callable | None,
                 n_out: int, nbytes: int, is_leaf: bool = False,
                 leaf_ref: "Tensor | None" = None):
        self.op = op
        self.parents = parents          # tuple[(node_id, slot) | None]
        self.vjp = vjp                  # maps output grads -> input grads
        self.n_out = n_out
        self.nbytes = nbytes            # tape-owned bytes charged for this node
        self.is_leaf = is_leaf
        self.leaf_ref = leaf_ref


class Tape:
    """Ordered record of primitive executions, usable as a context manager.

    Recording happens while the tape sits on the thread-local stack (inside
    the ``with`` block).  ``backward``/``run_backward`` may be called after
    the block exits; ``release()`` drops saved arrays and returns charged
    bytes to the meter.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}   # id(tensor) -> node id
        self._released = False
        self._meter = None  # bound lazily from the active meter at first record

    # -- context management --------------------------------------------
    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        top = _tape_stack().pop()
        if top is not self:
            raise GradkitError("tape stack corrupted: unbalanced enter/exit")

    # -- recording ------------------------------------------------------
    def _charge(self, nbytes: int) -> None:
        from .meter import active_meter
        meter = active_meter()
        if meter is not None:
            meter._alloc(nbytes)
            self._meter = meter

    def record(self, op: str, parents: tuple, vjp: Callable,
               outputs: Sequence[np.ndarray]) -> int:
        if self._released:
            raise GradkitError("cannot record on a released tape")
        nbytes = int(sum(o.nbytes for o in outputs))
        node_id = len(self.nodes)
        self.nodes.append(Node(op, parents, vjp, len(outputs), nbytes))
        self._charge(nbytes)
        return node_id

    def ensure_leaf(self, tensor: Tensor) -> int:
        """Register a requires_grad tensor as a leaf node of this tape."""
        key = id(tensor)
        node_id = self._leaf_ids.get(key)
        if node_id is not None:
            return node_id
        node_id = len(self.nodes)
        nbytes = int(tensor.values.nbytes)
        self.nodes.append(Node("leaf", (), None, 1, nbytes,
                               is_leaf=True, leaf_ref=tensor))
        self._leaf_ids[key] = node_id
        tensor.tape = self
        tensor.node = node_id
        tensor.slot = 0
        self._charge(nbytes)
        return node_id

    # -- backward ---------------------------------------------------------
    def run_backward(self, seeds: list[tuple[Tensor, np.ndarray]],
                     accumulate_leaf_grads: bool = True) -> dict[int, np.ndarray]:
        """Reverse sweep from explicit (tensor, gradient) seeds.

        Returns a map from leaf node id to accumulated gradient.  Each
        non-leaf node's vjp runs at most once, which bounds re-execution
        work for checkpointed segments.
        """
        if self._released:
            raise GradkitError("cannot run backward on a released tape")
        grads: list[list[np.ndarray | None] | None] = [None] * len(self.nodes)

        def _accumulate(node_id: int, slot: int, g: np.ndarray) -> None:
            cell = grads[node_id]
            if cell is None:
                cell = [None] * self.nodes[node_id].n_out
                grads[node_id] = cell
            if cell[slot] is None:
                cell[slot] = g.copy() if not g.flags.owndata else g
            else:
                cell[slot] = cell[slot] + g

        start = -1
        for tensor, seed in seeds:
            if tensor.tape is not self or tensor.node is None:
                raise DetachedGraph("seed tensor does not belong to this tape")
            seed = np.asarray(seed, dtype=tensor.values.dtype)
            if seed.shape != tensor.values.shape:
                raise ShapeMismatch(
                    f"seed gradient shape {seed.shape} != value shape {tensor.values.shape}")
            _accumulate(tensor.node, tensor.slot, seed)
            start = max(start, tensor.node)

        leaf_grads: dict[int, np.ndarray] = {}
        for node_id in range(start, -1, -1):
            cell = grads[node_id]
            if cell is None:
                continue
            node = self.nodes[node_id]
            if node.is_leaf:
                g = cell[0]
                if g is None:
                    continue
                if not np.all(np.isfinite(g)):
                    raise NonFiniteValue(f"non-finite gradient at leaf node {node_id}")
                leaf_grads[node_id] = g
                if accumulate_leaf_grads and node.leaf_ref is not None:
                    leaf = node.leaf_ref
                    leaf.grad = g if leaf.grad is None else leaf.grad + g
                grads[node_id] = None
                continue
            input_grads = node.vjp(cell)
            if len(input_grads) != len(node.parents):
                raise GradkitError(f"vjp of op '{node.op}' returned wrong arity")
            for parent, g in zip(node.parents, input_grads):
                if parent is None or g is None:
                    continue
                if not np.all(np.isfinite(g)):
                    raise NonFiniteValue(f"non-finite gradient out of op '{node.op}'")
                _accumulate(parent[0], parent[1], g)
            grads[node_id] = None
        return leaf_grads

    # -- lifecycle --------------------------------------------------------
    def release(self) -> None:
        """Drop node records and return charged bytes to the meter."""
        if self._released:
            return
        total = sum(n.nbytes for n in self.nodes)
        if self._meter is not None:
            self._meter._free(total)
        self.nodes = []
        self._leaf_ids = {}
        self._released = True

    def __len__(self) -> int:
        return len(self.nodes)


_EAGER_GUARD = object()


def backward(loss: Tensor, retain: bool = False) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar loss.

    Writes ``.grad`` on every reachable leaf and returns the
    ``{leaf node id: gradient}`` map.  The tape is released afterwards
    unless ``retain`` is True.
    """
    if loss.tape is None or loss.node is None:
        raise DetachedGraph("loss tensor is not attached to a tape")
    if loss.values.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.values.shape}")
    if not np.all(np.isfinite(loss.values)):
        raise NonFiniteValue("loss is non-finite")
    tape = loss.tape
    seed = np.ones_like(loss.values)
    leaf_grads = tape.run_backward([(loss, seed)])
    if not retain:
        tape.release()
    return leaf_grads
