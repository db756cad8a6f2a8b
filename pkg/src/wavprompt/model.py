"""Encoder + prompt bank + head assembled into one countermeasure."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import archive
from .encoder import Encoder, EncoderConfig
from .errors import ArchiveError, ShapeError
from .head import Head, HeadConfig
from .prompting import Paradigm, PromptBank, forward, trainable_parameters
from .tensor import Parameter, Tensor, no_grad


@dataclass
class ModelOutput:
    logits: Tensor
    embedding: Tensor
    backend_input: Tensor
    attention: np.ndarray

    @property
    def scores(self) -> np.ndarray:
        """logit_real - logit_fake; higher means more likely real."""
        return self.logits.data[..., 1] - self.logits.data[..., 0]


class Detector:
    def __init__(self, paradigm: Paradigm, encoder_config: EncoderConfig | None = None,
                 head_config: HeadConfig | None = None, seed: int = 0):
        self.paradigm = paradigm
        self.encoder_config = encoder_config or EncoderConfig()
        self.head_config = head_config or HeadConfig()
        seeds = np.random.SeedSequence(seed).spawn(2)
        self.encoder = Encoder(self.encoder_config)
        d, l = self.encoder_config.model_dim, self.encoder_config.num_layers
        self.bank = PromptBank(paradigm, d, l, np.random.default_rng(seeds[0]))
        self.head = Head(d, self.head_config, np.random.default_rng(seeds[1]))
        self.encoder.set_layers_frozen(not paradigm.encoder_trainable)
        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names in model")

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.bank.parameters() + self.head.parameters()

    def trainable_parameters(self) -> list[Parameter]:
        return trainable_parameters(self.paradigm, self)

    def frozen_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.frozen]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def forward_features(self, e0: Tensor, z_hook=None) -> ModelOutput:
        backend_input, attn = forward(self.paradigm, self.bank, self.encoder, e0, z_hook=z_hook)
        logits, emb = self.head.forward(backend_input)
        return ModelOutput(logits, emb, backend_input, attn)

    def forward(self, waves: np.ndarray) -> ModelOutput:
        waves = np.asarray(waves, dtype=np.float64)
        single = waves.ndim == 1
        e0 = self.encoder.extract_batch(waves[None] if single else waves)
        if single:
            e0 = Tensor(e0.data[0])
        return self.forward_features(e0)

    def score(self, waves: np.ndarray, batch_size: int = 32) -> np.ndarray:
        out = []
        with no_grad():
            for start in range(0, len(waves), batch_size):
                out.append(self.forward(waves[start:start + batch_size]).scores)
        return np.concatenate(out) if out else np.zeros(0)

    # -- weights -------------------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state_dict(self, tensors: dict[str, np.ndarray], strict: bool = True) -> None:
        """Copy tensors into parameters; validates everything before touching anything."""
        params = {p.name: p for p in self.parameters()}
        missing = sorted(set(params) - set(tensors))
        if strict and missing:
            raise ArchiveError(f"archive is missing parameter(s): {', '.join(missing)}")
        unexpected = sorted(set(tensors) - set(params))
        if strict and unexpected:
            raise ArchiveError(f"archive has unknown tensor(s): {', '.join(unexpected)}")
        for name, arr in tensors.items():
            if name in params and params[name].shape != tuple(arr.shape):
                raise ShapeError(f"parameter {name}: archive shape {tuple(arr.shape)} "
                                 f"!= model shape {params[name].shape}")
        for name, arr in tensors.items():
            if name in params:
                params[name].data = np.array(arr, dtype=np.float64)

    def save_weights(self, path, meta: dict | None = None) -> None:
        archive.save(path, self.state_dict(), meta)

    def load_weights(self, path, strict: bool = True) -> dict:
        tensors, meta = archive.load(path)
        self.load_state_dict(tensors, strict=strict)
        return meta


def save_weights(model: Detector, path, meta: dict | None = None) -> None:
    model.save_weights(path, meta)


def load_weights(model: Detector, path, strict: bool = True) -> Detector:
    model.load_weights(path, strict=strict)
    return model
