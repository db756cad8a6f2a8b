"""Training paradigms as forward-assembly policies over a frozen encoder.

Deep prompting (PT, WPT, AfterPT, DelPT) feeds ``[prompts ; E_{i-1}]`` into
layer ``i`` and throws away the outputs at the prompt rows; the next layer
receives fresh learnable prompts in their place. The last layer's output,
prompt rows included, is the classifier input (except DelPT).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .encoder import Encoder, EncoderConfig
from .errors import ConfigError, ContractError
from .tensor import Parameter, Tensor, concat, no_grad, xavier_uniform_init
from .wavelet import BANDS, build_wavelet_prompt

KINDS = ("FR", "FT", "PT", "WPT", "ShallowPT", "AfterPT", "DelPT")
DEEP_PROMPT_KINDS = ("PT", "AfterPT", "DelPT")
WPT_MODES = ("every-forward", "at-init")


@dataclass(frozen=True)
class Paradigm:
    kind: str = "PT"
    p: int = 10
    w: int = 0
    wpt_mode: str = "every-forward"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown paradigm {self.kind!r}; expected one of {KINDS}")
        if self.wpt_mode not in WPT_MODES:
            raise ConfigError(f"unknown wpt_mode {self.wpt_mode!r}; expected one of {WPT_MODES}")
        if self.kind in ("FR", "FT"):
            if self.p or self.w:
                raise ConfigError(f"{self.kind} takes no prompt tokens (got p={self.p}, w={self.w})")
        elif self.kind == "WPT":
            if self.w % 4 or self.w < 0 or self.p < 0 or self.w + self.p < 1:
                raise ConfigError(f"WPT needs w % 4 == 0 and w + p >= 1 (got w={self.w}, p={self.p})")
        else:
            if self.p < 1 or self.w:
                raise ConfigError(f"{self.kind} needs p >= 1 and w == 0 (got p={self.p}, w={self.w})")

    @property
    def encoder_trainable(self) -> bool:
        return self.kind == "FT"

    @property
    def prompt_rows(self) -> int:
        """Rows prepended (or appended) at every prompted layer."""
        return self.w + self.p

    def output_length(self, t: int) -> int:
        if self.kind in ("FR", "FT", "DelPT"):
            return t
        return self.w + self.p + t

    def row_legend(self, t: int) -> list[str]:
        """Label of every row of the last layer's input sequence."""
        wavelet = [BANDS[i // (self.w // 4)] for i in range(self.w)] if self.w else []
        prompts = ["prompt"] * self.p if self.kind not in ("FR", "FT") else []
        audio = ["audio"] * t
        if self.kind == "AfterPT":
            return audio + prompts
        return wavelet + prompts + audio


class PromptBank:
    """Learnable per-layer prompt matrices (and wavelet initial tokens for WPT)."""

    def __init__(self, paradigm: Paradigm, model_dim: int, num_layers: int, seed=0):
        self.paradigm = paradigm
        self.model_dim = model_dim
        self.num_layers = num_layers
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        d = model_dim
        self.prompts: list[Parameter] = []
        self.wavelet: list[Parameter] = []
        kind = paradigm.kind
        if kind in ("FR", "FT"):
            return
        n_prompted = 1 if kind == "ShallowPT" else num_layers
        if paradigm.w:
            for k in range(1, n_prompted + 1):
                t_init = xavier_uniform_init(paradigm.w, d, rng)
                if paradigm.wpt_mode == "every-forward":
                    self.wavelet.append(Parameter(t_init.data, f"wavelet_init/layer{k}"))
                else:
                    with no_grad():
                        w_k = build_wavelet_prompt(t_init).tokens
                    self.wavelet.append(Parameter(w_k.data, f"wavelet_prompt/layer{k}"))
        if paradigm.p:
            for k in range(1, n_prompted + 1):
                self.prompts.append(Parameter(xavier_uniform_init(paradigm.p, d, rng).data,
                                              f"prompt/layer{k}"))

    def parameters(self) -> list[Parameter]:
        return self.wavelet + self.prompts

    def layer_tokens(self, k: int) -> Tensor | None:
        """Prompt rows inserted at layer ``k`` (1-based): ``[W_k ; P_k]``."""
        parts = []
        if self.wavelet:
            wk = self.wavelet[k - 1]
            if self.paradigm.wpt_mode == "every-forward":
                parts.append(build_wavelet_prompt(wk).tokens)
            else:
                parts.append(wk)
        if self.prompts:
            parts.append(self.prompts[k - 1])
        if not parts:
            return None
        return parts[0] if len(parts) == 1 else concat(parts, axis=0)


def _batched(tokens: Tensor, batch: int) -> Tensor:
    return tokens.reshape((1,) + tokens.shape).expand(batch, *tokens.shape)


def forward(paradigm: Paradigm, bank: PromptBank, encoder: Encoder, e0: Tensor,
            z_hook: Callable[[int, Tensor], Tensor] | None = None) -> tuple[Tensor, np.ndarray]:
    """Run the encoder stack under ``paradigm``; return the classifier input and last attention.

    ``e0`` is (t, d) or (B, t, d). ``z_hook(i, Z_i)`` returns a replacement for
    the prompt-row outputs of layer ``i < l``. Deep prompting discards them
    anyway, while ShallowPT carries them into the next layer; tests use the hook
    to show both behaviours.
    """
    if bank.paradigm != paradigm:
        raise ContractError(f"prompt bank was built for {bank.paradigm}, not {paradigm}")
    if bank.model_dim != encoder.config.model_dim or bank.num_layers != encoder.config.num_layers:
        raise ContractError("prompt bank geometry does not match the encoder")
    single = e0.ndim == 2
    x = e0.reshape((1,) + e0.shape) if single else e0
    batch, t = x.shape[0], x.shape[1]
    n_layers = encoder.config.num_layers
    kind = paradigm.kind
    r = paradigm.prompt_rows
    attn = None

    if kind in ("FR", "FT"):
        for i in range(1, n_layers + 1):
            x, attn = encoder.layer_forward(i, x)
        out = x
    elif kind == "ShallowPT":
        x = concat([_batched(bank.layer_tokens(1), batch), x], axis=1)
        for i in range(1, n_layers + 1):
            x, attn = encoder.layer_forward(i, x)
            if z_hook is not None and i < n_layers:
                x = concat([z_hook(i, x[:, :r]), x[:, r:]], axis=1)
        out = x
    else:
        after = kind == "AfterPT"
        e = x
        for i in range(1, n_layers + 1):
            prompts = _batched(bank.layer_tokens(i), batch)
            inp = concat([e, prompts] if after else [prompts, e], axis=1)
            y, attn = encoder.layer_forward(i, inp)
            if i == n_layers:
                out = y
                break
            z = y[:, t:] if after else y[:, :r]
            e = y[:, :t] if after else y[:, r:]
            if z_hook is not None:
                z = z_hook(i, z)  # discarded: the next layer gets fresh prompts
        if kind == "DelPT":
            out = out[:, r:]

    if single:
        return out.reshape(out.shape[1:]), attn[0]
    return out, attn


def trainable_parameters(paradigm: Paradigm, model) -> list[Parameter]:
    """Parameters the optimizer may update, in a fixed order: bank, encoder layers, head."""
    params = list(model.bank.parameters())
    if paradigm.encoder_trainable:
        params += model.encoder.layer_parameters()
    params += model.head.parameters()
    return params


def count_trainable_params(paradigm: Paradigm, config: EncoderConfig, head_params: int) -> int:
    """Closed-form trainable parameter count."""
    d, l = config.model_dim, config.num_layers
    kind = paradigm.kind
    if kind == "FR":
        extra = 0
    elif kind == "FT":
        extra = l * config.layer_param_count()
    elif kind == "ShallowPT":
        extra = paradigm.prompt_rows * d
    else:
        extra = paradigm.prompt_rows * d * l
    return extra + head_params
