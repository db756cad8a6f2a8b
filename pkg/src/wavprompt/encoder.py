"""Frozen convolutional front end plus a pre-norm transformer encoder stack.

This is a seeded stand-in for an SSL speech model. Each front-end block is
conv -> layer norm over channels -> GELU, as in XLSR. The first block is a
fixed mel-spaced Gabor filterbank so that the frozen front end resolves
spectral detail without pretraining; everything else is randomly initialized.
The front end (conv stack, feature projection and position table) is always
frozen. Whether the transformer layers are trainable is decided by the
paradigm; see :mod:`wavprompt.prompting`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError
from .tensor import Parameter, Tensor, layer_norm, no_grad, softmax, xavier_uniform_init

DESK_FRONTEND = ((64, 400, 160),)
XLSR_FRONTEND = ((512, 10, 5),) + ((512, 3, 2),) * 4 + ((512, 2, 2),) * 2


@dataclass
class EncoderConfig:
    sample_rate: int = 16000
    clip_len: int = 16000
    model_dim: int = 64
    num_layers: int = 4
    num_heads: int = 4
    ffn_dim: int = 128
    frontend: tuple = DESK_FRONTEND
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        self.frontend = tuple(tuple(int(v) for v in spec) for spec in self.frontend)
        if self.model_dim % self.num_heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by num_heads {self.num_heads}")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.token_count() < 1:
            raise ConfigError(f"front end reduces clip_len {self.clip_len} to zero tokens")

    def token_count(self) -> int:
        n = self.clip_len
        for _, kernel, stride in self.frontend:
            n = (n - kernel) // stride + 1
            if n < 1:
                return 0
        return n

    @classmethod
    def full_scale(cls, **overrides) -> "EncoderConfig":
        """XLSR-300M-like geometry: 4 s at 16 kHz, d=1024, 24 layers."""
        base = dict(clip_len=64600, model_dim=1024, num_layers=24, num_heads=16,
                    ffn_dim=4096, frontend=XLSR_FRONTEND)
        base.update(overrides)
        return cls(**base)

    def layer_param_count(self) -> int:
        d, f = self.model_dim, self.ffn_dim
        return 4 * (d * d + d) + 2 * d * f + f + d + 4 * d


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _inv_mel(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def gabor_filterbank(kernel: int, channels: int, sample_rate: int, f_min: float = 40.0) -> np.ndarray:
    """(kernel, channels) Hann-windowed cosines at mel-spaced centres, unit L2 norm per column."""
    f_max = 0.4875 * sample_rate
    centres = _inv_mel(np.linspace(_mel(f_min), _mel(f_max), channels))
    n = np.arange(kernel)
    w = np.hanning(kernel + 2)[1:-1, None] * np.cos(2.0 * np.pi * centres[None] * n[:, None] / sample_rate)
    return w / np.linalg.norm(w, axis=0)


@dataclass
class TokenSequence:
    tokens: Tensor

    @property
    def t(self) -> int:
        return self.tokens.shape[-2]


def _windows(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(B, T, C) -> (B, T_out, kernel * C) frames for a strided 1-D convolution."""
    b, t, c = x.shape
    n = (t - kernel) // stride + 1
    if kernel == stride:
        return x[:, :n * stride].reshape(b, n, kernel * c)
    win = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=1)[:, ::stride][:, :n]
    # (B, n, C, k) -> (B, n, k, C)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b, n, kernel * c)


class Encoder:
    def __init__(self, config: EncoderConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, f = config.model_dim, config.ffn_dim
        self.frontend: list[Parameter] = []
        c_in = 1
        for j, (c_out, kernel, _) in enumerate(config.frontend, start=1):
            if j == 1 and c_in == 1:
                w = gabor_filterbank(kernel, c_out, config.sample_rate)
            else:
                w = xavier_uniform_init(kernel * c_in, c_out, rng, fan_in=kernel * c_in, fan_out=c_out).data
            self.frontend.append(Parameter(w, f"frontend/conv{j}.weight", frozen=True))
            self.frontend.append(Parameter(np.zeros(c_out), f"frontend/conv{j}.bias", frozen=True))
            self.frontend.append(Parameter(np.ones(c_out), f"frontend/conv{j}_ln.gain", frozen=True))
            self.frontend.append(Parameter(np.zeros(c_out), f"frontend/conv{j}_ln.bias", frozen=True))
            c_in = c_out
        t = config.token_count()
        proj = xavier_uniform_init(c_in, d, rng, fan_in=c_in, fan_out=d)
        self.frontend += [
            Parameter(np.ones(c_in), "frontend/proj_ln.gain", frozen=True),
            Parameter(np.zeros(c_in), "frontend/proj_ln.bias", frozen=True),
            Parameter(proj.data, "frontend/proj.weight", frozen=True),
            Parameter(np.zeros(d), "frontend/proj.bias", frozen=True),
            Parameter(0.02 * rng.standard_normal((t, d)), "frontend/pos_table", frozen=True),
        ]
        self._fe = {p.name: p for p in self.frontend}

        # residual-branch outputs scaled by 1/sqrt(2 l) so that the random stack
        # perturbs rather than overwrites the front-end features
        residual_scale = 1.0 / math.sqrt(2 * config.num_layers)
        self.layers: list[dict[str, Parameter]] = []
        for k in range(1, config.num_layers + 1):
            pre = f"encoder/layer{k}/"
            layer = {}
            for name in ("wq", "wk", "wv", "wo"):
                w = xavier_uniform_init(d, d, rng, d, d).data
                if name == "wo":
                    w = w * residual_scale
                layer[name] = Parameter(w, pre + "attn." + name)
                layer["b" + name[1]] = Parameter(np.zeros(d), pre + "attn.b" + name[1])
            layer["w1"] = Parameter(xavier_uniform_init(d, f, rng, d, f).data, pre + "ffn.w1")
            layer["b1"] = Parameter(np.zeros(f), pre + "ffn.b1")
            w2 = xavier_uniform_init(f, d, rng, f, d).data * residual_scale
            layer["w2"] = Parameter(w2, pre + "ffn.w2")
            layer["b2"] = Parameter(np.zeros(d), pre + "ffn.b2")
            for ln in ("ln1", "ln2"):
                layer[ln + ".gain"] = Parameter(np.ones(d), pre + ln + ".gain")
                layer[ln + ".bias"] = Parameter(np.zeros(d), pre + ln + ".bias")
            self.layers.append(layer)

    # -- parameters ----------------------------------------------------------------------

    def frontend_parameters(self) -> list[Parameter]:
        return list(self.frontend)

    def layer_parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.values()]

    def parameters(self) -> list[Parameter]:
        return self.frontend_parameters() + self.layer_parameters()

    def set_layers_frozen(self, frozen: bool) -> None:
        for p in self.layer_parameters():
            p.frozen = frozen

    # -- forward -------------------------------------------------------------------------

    def extract_batch(self, waves: np.ndarray) -> Tensor:
        """Map a (B, L) batch of waveforms to E_0 of shape (B, t, d)."""
        waves = np.asarray(waves, dtype=np.float64)
        if waves.ndim != 2 or waves.shape[1] != self.config.clip_len:
            raise ContractError(
                f"expected waveforms of length {self.config.clip_len}, got shape {waves.shape}")
        fe = self._fe
        with no_grad():
            h = waves[:, :, None]
            for j, (_, kernel, stride) in enumerate(self.config.frontend, start=1):
                frames = _windows(h, kernel, stride)
                z = Tensor(frames) @ fe[f"frontend/conv{j}.weight"] + fe[f"frontend/conv{j}.bias"]
                z = layer_norm(z, fe[f"frontend/conv{j}_ln.gain"], fe[f"frontend/conv{j}_ln.bias"],
                               self.config.ln_eps)
                h = z.gelu().data
            h = layer_norm(Tensor(h), fe["frontend/proj_ln.gain"], fe["frontend/proj_ln.bias"],
                           self.config.ln_eps)
            e0 = h @ fe["frontend/proj.weight"] + fe["frontend/proj.bias"] + fe["frontend/pos_table"]
        return Tensor(e0.data)

    def extract_features(self, wave: np.ndarray) -> TokenSequence:
        """E_0 (t x d) for one waveform of exactly ``clip_len`` samples."""
        wave = np.asarray(wave, dtype=np.float64)
        if wave.ndim != 1 or wave.shape[0] != self.config.clip_len:
            raise ContractError(f"expected {self.config.clip_len} samples, got shape {wave.shape}")
        return TokenSequence(Tensor(self.extract_batch(wave[None])[0].data))

    def layer_forward(self, layer_idx: int, x: Tensor) -> tuple[Tensor, np.ndarray]:
        """One pre-norm encoder layer; returns the output and attention weights.

        ``x`` is (S, d) or (B, S, d); attention is (heads, S, S) or (B, heads, S, S).
        """
        if not 1 <= layer_idx <= self.config.num_layers:
            raise ContractError(f"layer index {layer_idx} outside 1..{self.config.num_layers}")
        p = self.layers[layer_idx - 1]
        single = x.ndim == 2
        if single:
            x = x.reshape((1,) + x.shape)
        b, s, d = x.shape
        heads = self.config.num_heads
        dh = d // heads
        eps = self.config.ln_eps

        h = layer_norm(x, p["ln1.gain"], p["ln1.bias"], eps)

        def split(t):
            return t.reshape(b, s, heads, dh).transpose(0, 2, 1, 3)

        q = split((h @ p["wq"] + p["bq"]) * (1.0 / math.sqrt(dh)))
        k = split(h @ p["wk"] + p["bk"])
        v = split(h @ p["wv"] + p["bv"])
        attn = softmax(q @ k.transpose(0, 1, 3, 2), axis=-1)
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, s, d)
        x = x + (ctx @ p["wo"] + p["bo"])
        h2 = layer_norm(x, p["ln2.gain"], p["ln2.bias"], eps)
        x = x + ((h2 @ p["w1"] + p["b1"]).gelu() @ p["w2"] + p["b2"])
        if single:
            return x.reshape(s, d), attn.data[0]
        return x, attn.data
