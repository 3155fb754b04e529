"""Minimal reverse-mode autodiff with segment checkpointing and cost metering."""

from .tape import (DetachedGraph, GradkitError, ImpureSegment, NonFiniteValue,
                   NonScalarLoss, ShapeMismatch, Tape, Tensor, UnknownOp,
                   active_tape, backward)
from .ops import (NONLINEARITIES, add, as_tensor, conv2d, constant, exp,
                  forward_op, gather, log, matmul, mul, nonlinearity, power,
                  reduce_mean, reduce_sum, reshape, slice_, softmax, sqrt)
from .checkpoint import checkpoint
from .meter import CostMeter, MeterError, active_meter, meter_scope


def tensor(values, requires_grad: bool = False) -> Tensor:
    """Factory for leaf tensors."""
    return Tensor(values, requires_grad=requires_grad)


__all__ = [
    "Tensor", "Tape", "tensor", "backward", "active_tape", "checkpoint",
    "CostMeter", "meter_scope", "active_meter",
    "add", "mul", "matmul", "conv2d", "nonlinearity", "reshape", "slice_",
    "gather", "reduce_sum", "reduce_mean", "log", "exp", "sqrt", "power",
    "softmax", "forward_op", "as_tensor", "constant", "NONLINEARITIES",
    "GradkitError", "ShapeMismatch", "UnknownOp", "DetachedGraph",
    "NonScalarLoss", "NonFiniteValue", "ImpureSegment", "MeterError",
]
