"""Versioned denoiser persistence: one binary file plus a schedule sidecar.

Layout (little-endian):

    magic   4 bytes  b"NLCK"
    version 1 byte   currently 1
    hlen    uint32   header length
    header  JSON     {arch, dtype, param_order, n_params, meta}
    body    float64  concatenated parameters in header order

The noise schedule trains into the weights, so it travels alongside as
``<path>.sched.json``; loading refuses to guess when the sidecar is gone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..diffcore import NoiseSchedule
from .denoiser import Denoiser, DenoiserArch

__all__ = ["DenoiserCheckpoint", "save_checkpoint", "load_checkpoint",
           "CheckpointError", "FORMAT_VERSION"]

MAGIC = b"NLCK"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class DenoiserCheckpoint:
    arch: DenoiserArch
    params: np.ndarray          # flat float64
    dtype: str
    meta: dict

    def build(self) -> Denoiser:
        model = Denoiser(self.arch, dtype=np.dtype(self.dtype))
        model.load_vector(self.params)
        return model


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".sched.json")


def save_checkpoint(path, model: Denoiser, schedule: NoiseSchedule,
                    meta: dict | None = None) -> Path:
    path = Path(path)
    header = {
        "arch": model.arch.to_dict(),
        "dtype": str(model.dtype),
        "param_order": list(model._order),
        "n_params": int(model.n_params),
        "meta": meta or {},
    }
    blob = json.dumps(header).encode("utf-8")
    body = model.param_vector().astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(body)
    _sidecar(path).write_text(schedule.to_json())
    return path


def load_checkpoint(path) -> tuple[Denoiser, NoiseSchedule, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a denoiser checkpoint")
    version = raw[4]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}; "
                              f"this build reads version {FORMAT_VERSION}")
    hlen = struct.unpack("<I", raw[5:9])[0]
    header = json.loads(raw[9:9 + hlen].decode("utf-8"))
    body = np.frombuffer(raw[9 + hlen:], dtype="<f8")
    if body.size != header["n_params"]:
        raise CheckpointError(f"parameter count mismatch: header says "
                              f"{header['n_params']}, body holds {body.size}")
    arch = DenoiserArch.from_dict(header["arch"])
    model = Denoiser(arch, dtype=np.dtype(header["dtype"]))
    if header["param_order"] != model._order:
        raise CheckpointError("parameter order in file does not match this build")
    model.load_vector(body)
    sidecar = _sidecar(path)
    if not sidecar.exists():
        raise CheckpointError(f"schedule sidecar missing: {sidecar}")
    schedule = NoiseSchedule.from_json(sidecar.read_text())
    return model, schedule, header["meta"]
