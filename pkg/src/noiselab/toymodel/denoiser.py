"""Small conditional conv denoiser composed entirely of primitive ops.

Two stride-2 downsamples, a middle block, two nearest-upsample decoder
blocks with additive skips, silu activations.  Per block, a sinusoidal
time embedding and a learned style embedding pass through block-local
linear maps and are added channelwise, so class-conditional and
unconditional predictions share every conv parameter.  The style table
has one extra row: the null (unconditional) token used for guidance
training and sampling.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .. import gradkit as gk

__all__ = ["DenoiserArch", "Denoiser", "sinusoidal_embedding"]


@dataclass(frozen=True)
class DenoiserArch:
    f_bins: int = 64
    n_frames: int = 128
    base_channels: int = 12
    mid_channels: int = 24
    emb_dim: int = 32
    n_styles: int = 4
    n_train_steps: int = 1000

    def __post_init__(self):
        if self.f_bins % 4 or self.n_frames % 4:
            raise ValueError("grid sides must be divisible by 4 (two downsamples)")
        if self.emb_dim % 2:
            raise ValueError("embedding dim must be even (sin/cos halves)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserArch":
        return cls(**d)


def sinusoidal_embedding(t, dim: int, max_period: float = 10_000.0,
                         dtype=np.float64) -> np.ndarray:
    """[B, dim] constant embedding of integer noise levels."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1).astype(dtype)


# blocks: (name, in_ch_key, out_ch_key, stride, upsample_before)
_BLOCKS = (
    ("enc0", "in", "base", 1, False),
    ("enc1", "base", "base", 2, False),
    ("enc2", "base", "mid", 2, False),
    ("mid", "mid", "mid", 1, False),
    ("dec1", "mid", "base", 1, True),
    ("dec2", "base", "base", 1, True),
)


class Denoiser:
    """Callable eps model: ``model(x, t, style) -> Tensor`` on [B,1,F,N]."""

    def __init__(self, arch: DenoiserArch, rng: np.random.Generator | None = None,
                 dtype=np.float64):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.params: dict[str, gk.Tensor] = {}
        self._order: list[str] = []
        self._init_params(rng or np.random.default_rng(0))

    # -- parameter bookkeeping -------------------------------------------
    def _add_param(self, name: str, values: np.ndarray) -> None:
        self.params[name] = gk.tensor(values.astype(self.dtype), requires_grad=True)
        self._order.append(name)

    def _channels(self, key: str) -> int:
        return {"in": 1, "base": self.arch.base_channels,
                "mid": self.arch.mid_channels, "out": 1}[key]

    def _init_params(self, rng: np.random.Generator) -> None:
        a = self.arch
        for name, cin_key, cout_key, _, _ in _BLOCKS:
            cin, cout = self._channels(cin_key), self._channels(cout_key)
            scale = math.sqrt(2.0 / (cin * 9))
            self._add_param(f"{name}.w", rng.standard_normal((cout, cin, 3, 3)) * scale)
            self._add_param(f"{name}.b", np.zeros(cout))
            emb_scale = 1.0 / math.sqrt(a.emb_dim)
            self._add_param(f"{name}.t_proj",
                            rng.standard_normal((a.emb_dim, cout)) * emb_scale)
            self._add_param(f"{name}.s_proj",
                            rng.standard_normal((a.emb_dim, cout)) * emb_scale)
        self._add_param("out.w",
                        rng.standard_normal((1, a.base_channels, 3, 3)) * 0.01)
        self._add_param("out.b", np.zeros(1))
        self._add_param("style_table",
                        rng.standard_normal((a.n_styles + 1, a.emb_dim)) * 0.5)

    @property
    def n_params(self) -> int:
        return sum(p.values.size for p in self.params.values())

    @property
    def null_style(self) -> int:
        return self.arch.n_styles

    def param_vector(self) -> np.ndarray:
        return np.concatenate([self.params[n].values.astype(np.float64).ravel()
                               for n in self._order])

    def load_vector(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for name in self._order:
            p = self.params[name]
            n = p.values.size
            p.values = flat[pos:pos + n].reshape(p.values.shape).astype(self.dtype)
            pos += n

    def set_trainable(self, flag: bool) -> None:
        for p in self.params.values():
            p.requires_grad = bool(flag)

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def cast(self, dtype) -> "Denoiser":
        """Switch the working precision in place (parameters converted)."""
        self.dtype = np.dtype(dtype)
        for p in self.params.values():
            p.values = p.values.astype(self.dtype)
        return self

    # -- forward -----------------------------------------------------------
    def _style_ids(self, style, batch: int) -> np.ndarray:
        null = self.null_style
        if style is None:
            ids = np.full(batch, null, dtype=np.int64)
        else:
            ids = np.atleast_1d(np.asarray(style, dtype=np.int64))
            if ids.size == 1 and batch > 1:
                ids = np.full(batch, int(ids[0]), dtype=np.int64)
        if ids.shape != (batch,):
            raise ValueError(f"style ids shape {ids.shape} != batch {batch}")
        if np.any(ids < 0) or np.any(ids > null):
            raise ValueError(f"style ids must lie in 0..{null}")
        return ids

    def _inject(self, name: str, h, t_emb, s_emb, batch: int, cout: int):
        bias = gk.reshape(self.params[f"{name}.b"], (1, cout, 1, 1))
        t_term = gk.matmul(t_emb, self.params[f"{name}.t_proj"])
        s_term = gk.matmul(s_emb, self.params[f"{name}.s_proj"])
        mix = gk.reshape(gk.add(t_term, s_term), (batch, cout, 1, 1))
        return gk.add(gk.add(h, mix), bias)

    def _upsample(self, h, batch: int, ch: int, height: int, width: int):
        ones = gk.constant(np.ones((1, 1, 1, 2, 1, 2), dtype=self.dtype))
        spread = gk.mul(gk.reshape(h, (batch, ch, height, 1, width, 1)), ones)
        return gk.reshape(spread, (batch, ch, 2 * height, 2 * width))

    def __call__(self, x, t, style=None) -> gk.Tensor:
        x = gk.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected [B, 1, F, N] input, got {x.shape}")
        batch = x.shape[0]
        meter = gk.active_meter()
        if meter is not None:
            meter.count_model_call()
        t_emb = gk.constant(sinusoidal_embedding(t, self.arch.emb_dim,
                                                 dtype=self.dtype))
        if t_emb.shape[0] == 1 and batch > 1:
            t_emb = gk.constant(np.repeat(t_emb.values, batch, axis=0))
        s_emb = gk.gather(self.params["style_table"],
                          self._style_ids(style, batch), axis=0)

        skips: dict[str, gk.Tensor] = {}
        h = x
        height, width = self.arch.f_bins, self.arch.n_frames
        for name, cin_key, cout_key, stride, upsample in _BLOCKS:
            cout = self._channels(cout_key)
            if upsample:
                cin = self._channels(cin_key)
                h = self._upsample(h, batch, cin, height, width)
                height, width = 2 * height, 2 * width
            h = gk.conv2d(h, self.params[f"{name}.w"],
                          stride=(stride, stride), pad=(1, 1))
            if stride == 2:
                height, width = height // 2, width // 2
            h = self._inject(name, h, t_emb, s_emb, batch, cout)
            h = gk.nonlinearity(h, "silu")
            if name == "enc0":
                skips["full"] = h
            elif name == "enc1":
                skips["half"] = h
            elif name == "dec1":
                h = gk.add(h, skips["half"])
            elif name == "dec2":
                h = gk.add(h, skips["full"])
        out = gk.conv2d(h, self.params["out.w"], pad=(1, 1))
        return gk.add(out, gk.reshape(self.params["out.b"], (1, 1, 1, 1)))
