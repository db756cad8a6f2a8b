"""Single-level 2-D Haar transform of token matrices and wavelet prompt assembly."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .tensor import Tensor, concat

BANDS = ("LL", "LH", "HL", "HH")


@dataclass
class SubBands:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def __post_init__(self):
        shapes = {b.shape for b in self.as_tuple()}
        if len(shapes) != 1:
            raise ShapeError(f"sub-bands disagree in shape: {sorted(shapes)}")

    def as_tuple(self) -> tuple:
        return (self.ll, self.lh, self.hl, self.hh)

    @property
    def shape(self) -> tuple:
        return self.ll.shape

    def energy(self) -> float:
        return float(sum((b.data ** 2).sum() for b in self.as_tuple()))


@dataclass
class WaveletPrompt:
    tokens: Tensor
    band_of_row: dict = field(default_factory=dict)


def _analysis(x: np.ndarray) -> np.ndarray:
    a = x[..., 0::2, 0::2]
    b = x[..., 0::2, 1::2]
    c = x[..., 1::2, 0::2]
    d = x[..., 1::2, 1::2]
    return 0.5 * np.stack([a + b + c + d, a - b + c - d, a + b - c - d, a - b - c + d])


def _synthesis(stacked: np.ndarray) -> np.ndarray:
    ll, lh, hl, hh = stacked
    h, w = ll.shape[-2:]
    out = np.empty(ll.shape[:-2] + (2 * h, 2 * w))
    out[..., 0::2, 0::2] = 0.5 * (ll + lh + hl + hh)
    out[..., 0::2, 1::2] = 0.5 * (ll - lh + hl - hh)
    out[..., 1::2, 0::2] = 0.5 * (ll + lh - hl - hh)
    out[..., 1::2, 1::2] = 0.5 * (ll - lh - hl + hh)
    return out


def haar_dwt2_stacked(t: Tensor) -> Tensor:
    """Haar analysis returning one (4, w/2, d/2) tensor ordered LL, LH, HL, HH."""
    w, d = t.shape[-2:]
    if w % 2 or d % 2:
        raise ShapeError(f"haar_dwt2 needs even dimensions, got {t.shape}")
    # orthonormal transform: the adjoint is the inverse
    return Tensor._result(_analysis(t.data), (t,), lambda g: (_synthesis(g),), "haar_dwt2")


def haar_dwt2(t: Tensor) -> SubBands:
    """Filter rows and columns with L = [1, 1]/sqrt2 and H = [1, -1]/sqrt2, stride 2."""
    stacked = haar_dwt2_stacked(t)
    return SubBands(stacked[0], stacked[1], stacked[2], stacked[3])


def haar_idwt2(bands: SubBands) -> Tensor:
    """Exact inverse of :func:`haar_dwt2`."""
    parts = bands.as_tuple()
    stacked = concat([p.reshape((1,) + p.shape) for p in parts], axis=0)
    return Tensor._result(_synthesis(stacked.data), (stacked,), lambda g: (_analysis(g),), "haar_idwt2")


def _check_reshape(w: int, d: int) -> None:
    if w % 4 or d % 2:
        raise ShapeError(f"wavelet prompt needs w % 4 == 0 and even d, got w={w}, d={d}")


def reshape_subband(band: Tensor, w: int, d: int) -> Tensor:
    """Row-major flatten a (w/2, d/2) band into w/4 rows of length d."""
    _check_reshape(w, d)
    if band.shape != (w // 2, d // 2):
        raise ShapeError(f"band shape {band.shape} does not match w={w}, d={d}")
    return band.reshape(w // 4, d)


def unreshape_subband(rows: Tensor, w: int, d: int) -> Tensor:
    _check_reshape(w, d)
    if rows.shape != (w // 4, d):
        raise ShapeError(f"row block shape {rows.shape} does not match w={w}, d={d}")
    return rows.reshape(w // 2, d // 2)


def build_wavelet_prompt(t_init: Tensor) -> WaveletPrompt:
    """Transform ``t_init`` (w x d) into a w x d prompt, one w/4-row block per band."""
    w, d = t_init.shape
    _check_reshape(w, d)
    bands = haar_dwt2(t_init)
    blocks = [reshape_subband(b, w, d) for b in bands.as_tuple()]
    rows_per_band = w // 4
    band_of_row = {i: BANDS[i // rows_per_band] for i in range(w)}
    return WaveletPrompt(concat(blocks, axis=0), band_of_row)
