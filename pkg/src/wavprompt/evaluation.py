"""Scoring, EER, cross-type result matrices, parameter reports and exports.

EER convention: candidate thresholds are -inf, +inf and the midpoints between
adjacent distinct scores. A clip is accepted as real when its score is >= the
threshold. FAR is the fraction of fakes accepted and FRR the fraction of reals
rejected. The EER is (FAR + FRR) / 2 at the threshold minimizing |FAR - FRR|,
with ties broken by the smaller FAR + FRR.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import AUDIO_TYPES, ManifestEntry, load_clips, pcm_to_float, read_manifest
from .errors import ContractError
from .prompting import Paradigm, count_trainable_params
from .tensor import no_grad


@dataclass(frozen=True)
class ScoreRecord:
    clip_id: str
    score: float
    label: str
    audio_type: str

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ContractError(f"{self.clip_id}: non-finite score {self.score}")
        if self.label not in ("real", "fake"):
            raise ContractError(f"{self.clip_id}: unknown label {self.label!r}")


def eer_from_scores(real: np.ndarray, fake: np.ndarray) -> tuple[float, float]:
    """Return (eer, threshold) for arrays of real and fake scores."""
    real = np.sort(np.asarray(real, dtype=np.float64))
    fake = np.sort(np.asarray(fake, dtype=np.float64))
    if real.size == 0 or fake.size == 0:
        raise ContractError("EER needs at least one real and one fake score")
    distinct = np.unique(np.concatenate([real, fake]))
    thresholds = np.concatenate([[-np.inf], (distinct[:-1] + distinct[1:]) / 2, [np.inf]])
    n_fake, n_real = fake.size, real.size
    accepted = n_fake - np.searchsorted(fake, thresholds, side="left")
    rejected = np.searchsorted(real, thresholds, side="left")
    # compare rates over the common denominator n_fake * n_real so ties are exact
    gap = np.abs(accepted * n_real - rejected * n_fake)
    candidates = np.flatnonzero(gap == gap.min())
    total = (accepted * n_real + rejected * n_fake)[candidates]
    best = candidates[np.argmin(total)]
    far, frr = accepted[best] / n_fake, rejected[best] / n_real
    return float((far + frr) / 2), float(thresholds[best])


def compute_eer(records: Sequence[ScoreRecord]) -> float:
    real = [r.score for r in records if r.label == "real"]
    fake = [r.score for r in records if r.label == "fake"]
    if not real or not fake:
        raise ContractError(f"EER needs both classes, got {len(real)} real and {len(fake)} fake")
    return eer_from_scores(np.array(real), np.array(fake))[0]


# -- score and metrics files ---------------------------------------------------------------

SCORE_COLUMNS = ("clip_id", "score", "label", "audio_type")


def _meta_lines(meta: Mapping | None) -> list[str]:
    return [f"# {k}={meta[k]}" for k in sorted(meta or {})]


def write_scores(path, records: Iterable[ScoreRecord], meta: Mapping | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(SCORE_COLUMNS)
        for r in records:
            writer.writerow([r.clip_id, repr(float(r.score)), r.label, r.audio_type])


def read_scores(path) -> list[ScoreRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines, delimiter="\t")
    header = next(reader)
    if tuple(header) != SCORE_COLUMNS:
        raise ContractError(f"{path}: score header must be {SCORE_COLUMNS}")
    return [ScoreRecord(row[0], float(row[1]), row[2], row[3]) for row in reader if row]


def write_json(path, payload: Mapping) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- result matrices ---------------------------------------------------------------------


@dataclass
class ResultMatrix:
    """Rows are training conditions; columns the eval types plus AVG, cells EER in percent."""

    row_names: list
    types: tuple
    cells: np.ndarray  # (rows, len(types)), AVG computed on demand

    @property
    def columns(self) -> list:
        return list(self.types) + ["AVG"]

    def with_avg(self) -> np.ndarray:
        return np.hstack([self.cells, self.cells.mean(axis=1, keepdims=True)])

    @property
    def shape(self) -> tuple:
        return (len(self.row_names), len(self.types) + 1)

    def row(self, name: str) -> dict:
        vals = self.with_avg()[self.row_names.index(name)]
        return dict(zip(self.columns, vals))

    def to_tsv(self, path, meta: Mapping | None = None) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            for line in _meta_lines(meta):
                fh.write(line + "\n")
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            writer.writerow(["condition"] + self.columns)
            for name, vals in zip(self.row_names, self.with_avg()):
                writer.writerow([name] + [repr(float(v)) for v in vals])

    @classmethod
    def from_tsv(cls, path) -> "ResultMatrix":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = [r for r in csv.reader((ln for ln in fh if not ln.startswith("#")), delimiter="\t") if r]
        header = rows[0]
        types = tuple(header[1:-1])
        names = [r[0] for r in rows[1:]]
        cells = np.array([[float(v) for v in r[1:-1]] for r in rows[1:]])
        return cls(names, types, cells)

    def format_table(self) -> str:
        width = max(12, max(len(n) for n in self.row_names) + 2)
        head = "Condition".ljust(width) + "".join(c.rjust(9) for c in self.columns)
        lines = [head, "-" * len(head)]
        for name, vals in zip(self.row_names, self.with_avg()):
            lines.append(name.ljust(width) + "".join(f"{v:9.2f}" for v in vals))
        return "\n".join(lines)


# -- scoring ----------------------------------------------------------------------------


def score_manifest(model, manifest_path, batch_size: int = 32,
                   entries: Sequence[ManifestEntry] | None = None) -> list[ScoreRecord]:
    entries = read_manifest(manifest_path) if entries is None else list(entries)
    if not entries:
        raise ContractError(f"{manifest_path}: empty manifest")
    clip_len = model.encoder_config.clip_len
    pcm = load_clips(manifest_path, entries, clip_len)
    scores = []
    with no_grad():
        for start in range(0, len(entries), batch_size):
            waves = pcm_to_float(pcm[start:start + batch_size])
            scores.append(model.forward(waves).scores)
    flat = np.concatenate(scores)
    return [ScoreRecord(e.clip_id, float(s), e.label, e.audio_type) for e, s in zip(entries, flat)]


def cross_type_eval(model, manifests: Mapping[str, Path], out_dir, meta: Mapping | None = None,
                    batch_size: int = 32) -> dict:
    """Score every eval manifest, persist scores, then compute EER (%) per type and AVG.

    EERs are always computed from the written score files so that rescoring
    from disk reproduces them exactly.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    row = {}
    for audio_type, path in manifests.items():
        records = score_manifest(model, path, batch_size)
        score_path = out / f"scores_{audio_type}.tsv"
        write_scores(score_path, records, meta)
    for audio_type in manifests:
        row[audio_type] = 100.0 * compute_eer(read_scores(out / f"scores_{audio_type}.tsv"))
    row["AVG"] = float(np.mean([row[t] for t in manifests]))
    payload = {"eer_percent": row}
    payload.update(meta or {})
    write_json(out / "metrics.json", payload)
    return row


def rescore_dir(out_dir, types: Sequence[str]) -> dict:
    out = Path(out_dir)
    row = {t: 100.0 * compute_eer(read_scores(out / f"scores_{t}.tsv")) for t in types}
    row["AVG"] = float(np.mean([row[t] for t in types]))
    return row


# -- exports ----------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def attention_map(model, wave: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """Head-averaged last-layer attention (S x S) and the label of each position."""
    with no_grad():
        out = model.forward(np.asarray(wave, dtype=np.float64))
    attn = out.attention.mean(axis=0)
    legend = model.paradigm.row_legend(model.encoder_config.token_count())
    if model.paradigm.kind == "DelPT":
        # DelPT drops prompt rows only after the last layer; attention still covers them
        legend = ["prompt"] * model.paradigm.p + ["audio"] * model.encoder_config.token_count()
    return attn, legend


def export_attention(model, wave: np.ndarray, path, meta: Mapping | None = None) -> np.ndarray:
    attn, legend = attention_map(model, wave)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        fh.write(f"# paradigm={model.paradigm.kind} w={model.paradigm.w} p={model.paradigm.p}\n")
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["label"] + legend)
        for label, row in zip(legend, attn):
            writer.writerow([label] + [_fmt(v) for v in row])
    return attn


def read_attention(path) -> tuple[np.ndarray, list[str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader((ln for ln in fh if not ln.startswith("#")), delimiter="\t") if r]
    legend = rows[0][1:]
    mat = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return mat, legend


def sample_cells(entries: Sequence[ManifestEntry], n_per_cell: int, seed: int) -> list[ManifestEntry]:
    """Up to ``n_per_cell`` random entries for every (audio_type, label) cell, manifest order kept."""
    rng = np.random.default_rng(seed)
    chosen = []
    for audio_type in AUDIO_TYPES:
        for label in ("real", "fake"):
            cell = [i for i, e in enumerate(entries) if e.audio_type == audio_type and e.label == label]
            if len(cell) > n_per_cell:
                cell = sorted(rng.choice(cell, size=n_per_cell, replace=False).tolist())
            chosen += cell
    return [entries[i] for i in sorted(chosen)]


def export_embeddings(model, manifest_path, n_per_cell: int, path, seed: int = 0,
                      meta: Mapping | None = None, batch_size: int = 32) -> int:
    entries = read_manifest(manifest_path)
    if not entries:
        raise ContractError(f"{manifest_path}: empty manifest")
    picked = sample_cells(entries, n_per_cell, seed)
    pcm = load_clips(manifest_path, picked, model.encoder_config.clip_len)
    embs = []
    with no_grad():
        for start in range(0, len(picked), batch_size):
            embs.append(model.forward(pcm_to_float(pcm[start:start + batch_size])).embedding.data)
    emb = np.concatenate(embs) if embs else np.zeros((0, model.head_config.embedding_dim))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in _meta_lines(meta):
            fh.write(line + "\n")
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(["clip_id", "audio_type", "label"] + [f"e{j}" for j in range(emb.shape[1])])
        for e, vec in zip(picked, emb):
            writer.writerow([e.clip_id, e.audio_type, e.label] + [_fmt(v) for v in vec])
    return len(picked)


# -- parameter accounting ------------------------------------------------------------------


def _module_of(name: str) -> str:
    return name.split("/", 1)[0] if not name.startswith(("prompt/", "wavelet")) else "prompts"


def param_report(model) -> dict:
    """Trainable and frozen counts per module for a built model, plus the FT ratio."""
    trainable_ids = {id(p) for p in model.trainable_parameters()}
    modules: dict[str, dict] = {}
    for p in model.parameters():
        m = modules.setdefault(_module_of(p.name), {"trainable": 0, "frozen": 0})
        m["trainable" if id(p) in trainable_ids else "frozen"] += p.size
    trainable = sum(m["trainable"] for m in modules.values())
    head = model.head_config.param_count(model.encoder_config.model_dim)
    ft = count_trainable_params(Paradigm("FT", 0, 0), model.encoder_config, head)
    return {
        "paradigm": model.paradigm.kind,
        "modules": modules,
        "trainable": trainable,
        "frozen": sum(m["frozen"] for m in modules.values()),
        "ft_trainable": ft,
        "ft_ratio": ft / trainable,
    }


def frontend_param_count(config) -> int:
    n, c_in = 0, 1
    for spec in config.frontend:
        c_out, kernel = spec[0], spec[1]
        n += kernel * c_in * c_out + 3 * c_out
        c_in = c_out
    d = config.model_dim
    return n + 2 * c_in + c_in * d + d + config.token_count() * d


def param_report_for_config(paradigm: Paradigm, encoder_config, head_config) -> dict:
    """Closed-form report; no model is built, so it works at full scale."""
    d, l = encoder_config.model_dim, encoder_config.num_layers
    head = head_config.param_count(d)
    trainable = count_trainable_params(paradigm, encoder_config, head)
    prompts = trainable - head - (l * encoder_config.layer_param_count() if paradigm.kind == "FT" else 0)
    layers = l * encoder_config.layer_param_count()
    modules = {
        "frontend": {"trainable": 0, "frozen": frontend_param_count(encoder_config)},
        "encoder": {"trainable": layers if paradigm.encoder_trainable else 0,
                    "frozen": 0 if paradigm.encoder_trainable else layers},
        "prompts": {"trainable": prompts, "frozen": 0},
        "head": {"trainable": head, "frozen": 0},
    }
    ft = count_trainable_params(Paradigm("FT", 0, 0), encoder_config, head)
    return {
        "paradigm": paradigm.kind,
        "modules": modules,
        "trainable": trainable,
        "frozen": sum(m["frozen"] for m in modules.values()),
        "ft_trainable": ft,
        "ft_ratio": ft / trainable,
    }


def format_param_report(report: Mapping) -> str:
    lines = [f"paradigm: {report['paradigm']}",
             f"{'module':<10}{'trainable':>14}{'frozen':>14}"]
    for name, m in report["modules"].items():
        lines.append(f"{name:<10}{m['trainable']:>14,}{m['frozen']:>14,}")
    lines.append(f"{'total':<10}{report['trainable']:>14,}{report['frozen']:>14,}")
    lines.append(f"trainable: {report['trainable'] / 1e6:.2f}M   "
                 f"FT/this: {report['ft_ratio']:.1f}x")
    return "\n".join(lines)
