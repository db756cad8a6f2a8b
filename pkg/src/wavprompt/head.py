"""Classifier back end and weighted cross-entropy.

The back end projects every row of the classifier input, pools over rows
with multi-head attentive pooling, and maps the pooled vector through an MLP
to two logits (index 0 = fake, index 1 = real). With the default full-scale
sizes it holds about 0.45M parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ConfigError, NumericError
from .tensor import Parameter, Tensor, log_softmax, softmax, xavier_uniform_init

LABELS = ("fake", "real")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}


@dataclass
class HeadConfig:
    proj_dim: int = 64
    pool_heads: int = 4
    mlp_dims: tuple = (32,)
    target_param_budget: int = 0

    def __post_init__(self):
        self.mlp_dims = tuple(int(v) for v in self.mlp_dims)
        if self.proj_dim < 1 or self.pool_heads < 1 or any(v < 1 for v in self.mlp_dims):
            raise ConfigError(f"invalid head sizes: {self}")

    @classmethod
    def full_scale(cls) -> "HeadConfig":
        return cls(proj_dim=384, pool_heads=4, mlp_dims=(36,), target_param_budget=450_000)

    def param_count(self, model_dim: int) -> int:
        n = model_dim * self.proj_dim + self.proj_dim
        n += self.proj_dim * self.pool_heads + self.pool_heads
        width = self.proj_dim * self.pool_heads
        for h in self.mlp_dims + (2,):
            n += width * h + h
            width = h
        return n

    @property
    def embedding_dim(self) -> int:
        return self.mlp_dims[-1] if self.mlp_dims else 0


class Head:
    def __init__(self, model_dim: int, config: HeadConfig, seed=0):
        self.config = config
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        c = config
        self.proj_w = Parameter(xavier_uniform_init(model_dim, c.proj_dim, rng, model_dim, c.proj_dim).data,
                                "head/proj.weight")
        self.proj_b = Parameter(np.zeros(c.proj_dim), "head/proj.bias")
        # zero scores: pooling starts as a uniform mean over rows
        self.score_w = Parameter(np.zeros((c.proj_dim, c.pool_heads)), "head/pool.weight")
        self.score_b = Parameter(np.zeros(c.pool_heads), "head/pool.bias")
        self.mlp: list[tuple[Parameter, Parameter]] = []
        width = c.proj_dim * c.pool_heads
        dims = c.mlp_dims + (2,)
        for j, h in enumerate(dims, start=1):
            name = "head/out" if j == len(dims) else f"head/mlp{j}"
            w = xavier_uniform_init(width, h, rng, width, h)
            self.mlp.append((Parameter(w.data, name + ".weight"), Parameter(np.zeros(h), name + ".bias")))
            width = h

    def parameters(self) -> list[Parameter]:
        params = [self.proj_w, self.proj_b, self.score_w, self.score_b]
        for w, b in self.mlp:
            params += [w, b]
        return params

    def forward(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """(S, d) or (B, S, d) -> logits (2,) / (B, 2) and the penultimate embedding."""
        single = x.ndim == 2
        if single:
            x = x.reshape((1,) + x.shape)
        b = x.shape[0]
        xp = x @ self.proj_w + self.proj_b
        weights = softmax(xp @ self.score_w + self.score_b, axis=1)
        pooled = (weights.transpose(0, 2, 1) @ xp).reshape(b, -1)
        h = pooled
        for w, bias in self.mlp[:-1]:
            h = (h @ w + bias).gelu()
        w, bias = self.mlp[-1]
        logits = h @ w + bias
        if single:
            return logits.reshape(2), h.reshape(h.shape[1])
        return logits, h


@dataclass(frozen=True)
class ClassWeights:
    weight_real: float = 1.0
    weight_fake: float = 1.0

    def __post_init__(self):
        if not (self.weight_real > 0 and self.weight_fake > 0):
            raise ConfigError(f"class weights must be positive, got {self}")

    def as_array(self) -> np.ndarray:
        out = np.empty(2)
        out[LABEL_INDEX["real"]] = self.weight_real
        out[LABEL_INDEX["fake"]] = self.weight_fake
        return out


def _label_indices(labels) -> np.ndarray:
    if isinstance(labels, (str, int, np.integer)):
        labels = [labels]
    return np.array([LABEL_INDEX[v] if isinstance(v, str) else int(v) for v in labels])


def wce_loss(logits: Tensor, labels, weights: ClassWeights) -> Tensor:
    """Weighted cross-entropy, reduced by weighted mean over the batch."""
    single = logits.ndim == 1
    if single:
        logits = logits.reshape(1, 2)
    if not np.isfinite(logits.data).all():
        raise NumericError("wce_loss received non-finite logits")
    idx = _label_indices(labels)
    w = weights.as_array()[idx]
    logp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(idx)), idx] = w
    total = -(logp * onehot).sum()
    return total if single else total * (1.0 / w.sum())


def class_weights_from_counts(n_real: int, n_fake: int) -> ClassWeights:
    if n_real < 1 or n_fake < 1:
        raise ConfigError(f"need both classes to weight, got {n_real} real / {n_fake} fake")
    total = n_real + n_fake
    return ClassWeights(weight_real=2.0 * n_fake / total, weight_fake=2.0 * n_real / total)


def class_weights_from_manifest(entries: Iterable) -> ClassWeights:
    """Inverse-frequency weights normalized so that they sum to 2."""
    labels = [e.label for e in entries]
    return class_weights_from_counts(labels.count("real"), labels.count("fake"))
