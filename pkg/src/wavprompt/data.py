"""Waveform preprocessing, manifests, and the synthetic four-type benchmark.

Each audio type has its own spectral signature. Fake clips carry a spectral
notch (plus a mild amplitude quantization); by default each type places its
notch at a different frequency, so a detector trained on one type has no
reason to find another type's artifact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import wave
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError

AUDIO_TYPES = ("speech", "sound", "singing", "music")
SPLITS = ("train", "dev", "eval")
MANIFEST_COLUMNS = ("clip_id", "path", "audio_type", "label", "split")

# (centre, width) in Hz of the fake-clip notch when every type gets its own
# artifact carrier. Each band covers roughly a third of its type's energy and
# the four bands (skirts included) are disjoint.
TYPE_NOTCH = {
    "music": (325.0, 250.0),
    "speech": (850.0, 500.0),
    "singing": (2300.0, 1800.0),
    "sound": (5000.0, 2600.0),
}
SHARED_NOTCH = (1500.0, 800.0)
NOTCH_SKIRT_HZ = 100.0
NOTCH_MAX_DB = 30.0
NOISE_FLOOR_DB = -35.0

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, index: int) -> int:
    """Per-item seed from a base seed and an index; order independent."""
    return splitmix64((splitmix64(seed & _MASK64) + index) & _MASK64)


def pad_or_chop(x: np.ndarray, length: int) -> np.ndarray:
    """Keep the first ``length`` samples, or repeat-tile a short clip up to ``length``."""
    x = np.asarray(x)
    if x.ndim != 1 or x.size < 1:
        raise ContractError(f"pad_or_chop needs a non-empty 1-D waveform, got shape {x.shape}")
    if x.size >= length:
        return x[:length].copy()
    reps = -(-length // x.size)
    return np.tile(x, reps)[:length]


# -- synthetic signals ---------------------------------------------------------------------


def _harmonic_comb(rng, n, sr, f0_track, n_harm, decay=1.0, emphasis=None):
    phase = 2 * np.pi * np.cumsum(f0_track) / sr
    out = np.zeros(n)
    for h in range(1, n_harm + 1):
        freq = h * f0_track
        if np.mean(freq) >= 0.45 * sr:
            break
        amp = h ** -decay
        if emphasis is not None and emphasis[0] <= np.mean(freq) <= emphasis[1]:
            amp *= 3.0
        out += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    return out


def _shaped_noise(rng, n, sr):
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    shape = (np.maximum(freqs, 100.0) / 1000.0) ** rng.uniform(-0.3, 0.0)
    fc = rng.uniform(500, 3000)
    shape += np.exp(-0.5 * ((freqs - fc) / rng.uniform(200, 600)) ** 2)
    noise = np.fft.irfft(spec * shape, n)
    rate = rng.uniform(1, 6)
    bursts = 0.4 + 0.6 * np.abs(np.sin(np.pi * rate * np.arange(n) / sr + rng.uniform(0, np.pi)))
    return noise * bursts


def _base_signal(audio_type: str, rng, n: int, sr: int) -> np.ndarray:
    t = np.arange(n) / sr
    if audio_type == "speech":
        # voiced harmonic comb with formant-band emphasis and syllabic envelope
        f0 = rng.uniform(100, 300)
        track = f0 * (1 + 0.05 * np.sin(2 * np.pi * rng.uniform(1, 3) * t + rng.uniform(0, 6)))
        x = _harmonic_comb(rng, n, sr, track, 40, decay=1.0, emphasis=(300, 3000))
        syll = rng.uniform(3, 6)
        x *= 0.2 + 0.8 * np.abs(np.sin(np.pi * syll * t + rng.uniform(0, np.pi)))
    elif audio_type == "singing":
        # sustained bright voice with vibrato
        f0 = rng.uniform(200, 600)
        vib = 1 + 0.03 * np.sin(2 * np.pi * rng.uniform(5, 7) * t)
        x = _harmonic_comb(rng, n, sr, f0 * vib, 30, decay=0.5)
    elif audio_type == "sound":
        x = _shaped_noise(rng, n, sr)
    elif audio_type == "music":
        # a 3-4 note chord of steady harmonic tones, gated rhythm
        root = rng.uniform(110, 330)
        x = np.zeros(n)
        for ratio in (1.0, 1.25, 1.5, 2.0)[: rng.integers(3, 5)]:
            x += _harmonic_comb(rng, n, sr, np.full(n, root * ratio), 12, decay=1.0)
        x *= 0.6 + 0.4 * (np.sin(2 * np.pi * rng.uniform(1, 4) * t) > 0)
    else:
        raise ConfigError(f"unknown audio type {audio_type!r}; expected one of {AUDIO_TYPES}")
    x = x / (np.sqrt(np.mean(x * x)) + 1e-12)
    x += 10 ** (NOISE_FLOOR_DB / 20) * rng.standard_normal(n)
    return x


def notch_response(freqs: np.ndarray, centre: float, width: float,
                   skirt: float = NOTCH_SKIRT_HZ) -> np.ndarray:
    """1 inside the flat band, raised-cosine skirts, 0 elsewhere."""
    dist = np.abs(freqs - centre) - width / 2
    g = np.zeros_like(freqs)
    g[dist <= 0] = 1.0
    edge = (dist > 0) & (dist < skirt)
    g[edge] = 0.5 * (1 + np.cos(np.pi * dist[edge] / skirt))
    return g


def notch_band(audio_type: str, type_specific: bool = True) -> tuple[float, float]:
    """(centre, width) of the artifact notch for ``audio_type``."""
    if audio_type not in AUDIO_TYPES:
        raise ConfigError(f"unknown audio type {audio_type!r}; expected one of {AUDIO_TYPES}")
    return TYPE_NOTCH[audio_type] if type_specific else SHARED_NOTCH


def apply_artifact(x: np.ndarray, sr: int, centre: float, strength: float,
                   width: float) -> np.ndarray:
    """Quantize the amplitude, then carve a notch of ``NOTCH_MAX_DB * strength`` dB at ``centre``."""
    bits = 12.0 - 4.0 * strength
    step = 2.0 ** (1 - bits)
    x = np.round(x / step) * step
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.size, 1.0 / sr)
    spec *= 10.0 ** (-NOTCH_MAX_DB * strength * notch_response(freqs, centre, width) / 20.0)
    return np.fft.irfft(spec, x.size)


def synth_generate(audio_type: str, label: str, clip_len: int, seed: int, sample_rate: int = 16000,
                   artifact_strength: float = 0.7, type_specific: bool = True) -> np.ndarray:
    """One deterministic clip; real and fake with the same seed share the base signal."""
    if label not in ("real", "fake"):
        raise ConfigError(f"label must be 'real' or 'fake', got {label!r}")
    if not 0 < artifact_strength <= 1:
        raise ConfigError(f"artifact_strength must be in (0, 1], got {artifact_strength}")
    rng = np.random.default_rng(seed)
    x = _base_signal(audio_type, rng, clip_len, sample_rate)
    x *= rng.uniform(0.3, 0.9) / np.max(np.abs(x))
    if label == "fake":
        centre, width = notch_band(audio_type, type_specific)
        x = apply_artifact(x, sample_rate, centre, artifact_strength, width)
    return x


def band_energy_ratio(x: np.ndarray, sr: int, centre: float, half_width: float = 50.0) -> float:
    """Fraction of signal energy within ``centre +- half_width`` Hz."""
    power = np.abs(np.fft.rfft(x)) ** 2
    freqs = np.fft.rfftfreq(x.size, 1.0 / sr)
    band = np.abs(freqs - centre) <= half_width
    return float(power[band].sum() / power.sum())


# -- wav i/o -----------------------------------------------------------------------------


def to_pcm16(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(x) * 32767.0), -32768, 32767).astype("<i2")


def write_wav(path, x: np.ndarray, sample_rate: int) -> None:
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(to_pcm16(x).tobytes())


def read_wav_pcm16(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ContractError(f"{path}: expected mono 16-bit PCM")
        sr = fh.getframerate()
        data = np.frombuffer(fh.readframes(fh.getnframes()), dtype="<i2").copy()
    return data, sr


def read_wav(path) -> tuple[np.ndarray, int]:
    data, sr = read_wav_pcm16(path)
    return data.astype(np.float64) / 32767.0, sr


# -- manifests ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    clip_id: str
    path: str
    audio_type: str
    label: str
    split: str

    def __post_init__(self):
        if self.audio_type not in AUDIO_TYPES:
            raise ConfigError(f"{self.clip_id}: unknown audio type {self.audio_type!r}")
        if self.label not in ("real", "fake"):
            raise ConfigError(f"{self.clip_id}: unknown label {self.label!r}")
        if self.split not in SPLITS:
            raise ConfigError(f"{self.clip_id}: unknown split {self.split!r}")


def write_manifest(path, entries: Iterable[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for e in entries:
            writer.writerow([e.clip_id, e.path, e.audio_type, e.label, e.split])


def read_manifest(path) -> list[ManifestEntry]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if tuple(header or ()) != MANIFEST_COLUMNS:
            raise ContractError(f"{path}: manifest header must be {MANIFEST_COLUMNS}, got {header}")
        entries = [ManifestEntry(*row) for row in reader if row]
    ids = [e.clip_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ContractError(f"{path}: duplicate clip ids")
    return entries


def resolve_path(manifest_path, entry: ManifestEntry) -> Path:
    p = Path(entry.path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def load_clips(manifest_path, entries: Sequence[ManifestEntry] | None = None,
               clip_len: int | None = None) -> np.ndarray:
    """Stack the manifest's audio as int16 (N, L); each clip padded/chopped to ``clip_len``."""
    entries = read_manifest(manifest_path) if entries is None else entries
    rows = []
    for e in entries:
        pcm, _ = read_wav_pcm16(resolve_path(manifest_path, e))
        rows.append(pad_or_chop(pcm, clip_len) if clip_len else pcm)
    return np.stack(rows) if rows else np.zeros((0, clip_len or 0), dtype="<i2")


def pcm_to_float(pcm: np.ndarray) -> np.ndarray:
    return pcm.astype(np.float64) / 32767.0


# -- benchmark ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    train: int = 500
    dev: int = 100
    eval: int = 200
    sample_rate: int = 16000
    clip_len: int = 16000
    seed: int = 0
    artifact_strength: float = 0.7
    real_fraction: float = 0.5
    type_specific_artifacts: bool = True
    types: tuple = AUDIO_TYPES

    def __post_init__(self):
        self.types = tuple(self.types)
        if min(self.train, self.dev, self.eval) < 2:
            raise ConfigError("every split needs at least 2 clips per type")
        if not 0 < self.real_fraction < 1:
            raise ConfigError("real_fraction must be in (0, 1)")
        if not 0 < self.artifact_strength <= 1:
            raise ConfigError("artifact_strength must be in (0, 1]")
        unknown = set(self.types) - set(AUDIO_TYPES)
        if unknown:
            raise ConfigError(f"unknown audio types {sorted(unknown)}")

    def count(self, split: str) -> int:
        return getattr(self, split)

    def n_real(self, split: str) -> int:
        return int(round(self.count(split) * self.real_fraction))

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def benchmark_plan(spec: SyntheticSpec) -> list[tuple[ManifestEntry, int]]:
    """Every clip of the benchmark with its derived generation seed."""
    plan = []
    index = 0
    for audio_type in spec.types:
        for split in SPLITS:
            n, n_real = spec.count(split), spec.n_real(split)
            for i in range(n):
                label = "real" if i < n_real else "fake"
                clip_id = f"{audio_type}-{split}-{i:05d}"
                path = f"audio/{split}/{audio_type}/{clip_id}.wav"
                plan.append((ManifestEntry(clip_id, path, audio_type, label, split),
                             derive_seed(spec.seed, index)))
                index += 1
    return plan


def manifest_name(audio_type: str, split: str) -> str:
    return f"{audio_type}_{split}.tsv"


def make_benchmark(spec: SyntheticSpec, out_dir) -> dict[str, Path]:
    """Write audio, per-type manifests and combined ``all_<split>.tsv`` manifests.

    Returns a mapping from manifest stem (e.g. ``speech_train``) to its path.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create benchmark directory {out}: {exc}") from exc
    plan = benchmark_plan(spec)
    for entry, seed in plan:
        path = out / entry.path
        path.parent.mkdir(parents=True, exist_ok=True)
        x = synth_generate(entry.audio_type, entry.label, spec.clip_len, seed, spec.sample_rate,
                           spec.artifact_strength, spec.type_specific_artifacts)
        write_wav(path, x, spec.sample_rate)
    manifests = {}
    for split in SPLITS:
        rows = [e for e, _ in plan if e.split == split]
        for audio_type in spec.types:
            name = manifest_name(audio_type, split)
            write_manifest(out / name, [e for e in rows if e.audio_type == audio_type])
            manifests[name[:-4]] = out / name
        write_manifest(out / f"all_{split}.tsv", rows)
        manifests[f"all_{split}"] = out / f"all_{split}.tsv"
    meta = {"spec": asdict(spec), "digest": spec.digest()}
    (out / "benchmark.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return manifests
