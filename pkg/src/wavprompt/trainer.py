"""Training loop, model selection and the single-type / co-train benchmark protocols."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import archive
from .config import (CO_TRAIN_SCHEDULE, DESK_CO_TRAIN_SCHEDULE, DESK_SINGLE_TYPE_SCHEDULE,
                     SINGLE_TYPE_SCHEDULE, ExperimentConfig, save_config)
from .data import AUDIO_TYPES, derive_seed, load_clips, manifest_name, pcm_to_float, read_manifest
from .errors import ConfigError, ContractError, NumericError
from .evaluation import ResultMatrix, compute_eer, cross_type_eval, ScoreRecord, write_json
from .head import ClassWeights, class_weights_from_manifest, wce_loss
from .model import Detector
from .tensor import Adam, Tensor, no_grad

PROTOCOLS = ("single-type", "co-train")
LOG_COLUMNS = ("epoch", "train_loss", "dev_eer", "lr")


def frozen_checksum(model: Detector) -> str:
    """sha256 over the serialized frozen parameter set."""
    frozen = {p.name: p.data for p in model.frozen_parameters()}
    return hashlib.sha256(archive.dumps(frozen)).hexdigest()


def provenance(config: ExperimentConfig) -> dict:
    return {"config_digest": config.digest(), "seed": config.seed}


def build_model(config: ExperimentConfig) -> Detector:
    return Detector(config.paradigm, config.encoder, config.head, seed=config.seed)


def frontend_features(model: Detector, pcm: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """E_0 for every clip. The front end is frozen in every paradigm, so this is computed once."""
    return np.concatenate([model.encoder.extract_batch(pcm_to_float(pcm[i:i + batch_size])).data
                           for i in range(0, len(pcm), batch_size)])


def dev_eer(model: Detector, e0: np.ndarray, labels: list[str], batch_size: int = 64) -> float:
    out = []
    with no_grad():
        for start in range(0, len(e0), batch_size):
            out.append(model.forward_features(Tensor(e0[start:start + batch_size])).scores)
    scores = np.concatenate(out)
    records = [ScoreRecord(str(i), float(s), lab, "speech") for i, (s, lab) in enumerate(zip(scores, labels))]
    return compute_eer(records)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_eer: float
    lr: float


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    best_epoch: int
    best_dev_eer: float
    history: list[EpochRecord] = field(default_factory=list)
    frozen_checksum_start: str = ""
    frozen_checksum_end: str = ""


def write_log_header(path: Path, config: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in provenance(config).items():
            fh.write(f"# {key}\t{value}\n")
        fh.write("\t".join(LOG_COLUMNS) + "\n")


def append_log(path: Path, rec: EpochRecord) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(f"{rec.epoch}\t{rec.train_loss!r}\t{rec.dev_eer!r}\t{rec.lr!r}\n")


def read_log(path) -> list[EpochRecord]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if not ln.startswith("#")]
    if not lines or tuple(lines[0].split("\t")) != LOG_COLUMNS:
        raise ContractError(f"{path}: training log header must be {LOG_COLUMNS}")
    for ln in lines[1:]:
        if ln:
            e, loss, eer, lr = ln.split("\t")
            rows.append(EpochRecord(int(e), float(loss), float(eer), float(lr)))
    return rows


def select_best(history: list[EpochRecord]) -> EpochRecord:
    """Lowest dev EER; ties go to the earlier epoch."""
    if not history:
        raise ContractError("empty training history")
    return min(history, key=lambda r: (r.dev_eer, r.epoch))


def train(config: ExperimentConfig, out_dir, verbose: bool = False) -> TrainResult:
    """Train one model; writes ``best.wpt``, ``train_log.tsv`` and ``config.ini`` to ``out_dir``."""
    if not config.train_manifest or not config.dev_manifest:
        raise ConfigError("train and dev manifests are required")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(config, out / "config.ini")

    train_entries = read_manifest(config.train_manifest)
    dev_entries = read_manifest(config.dev_manifest)
    if not train_entries or not dev_entries:
        raise ContractError("train and dev manifests must be non-empty")
    clip_len = config.encoder.clip_len
    train_pcm = load_clips(config.train_manifest, train_entries, clip_len)
    dev_pcm = load_clips(config.dev_manifest, dev_entries, clip_len)
    labels = np.array([e.label for e in train_entries])
    dev_labels = [e.label for e in dev_entries]
    weights = (ClassWeights(*config.class_weights) if config.class_weights
               else class_weights_from_manifest(train_entries))

    model = build_model(config)
    train_e0 = frontend_features(model, train_pcm)
    dev_e0 = frontend_features(model, dev_pcm)
    del train_pcm, dev_pcm
    params = model.trainable_parameters()
    opt = Adam(params, config.lr)
    checksum_start = frozen_checksum(model)
    rng = np.random.default_rng(derive_seed(config.seed, 0x7EA1))
    meta = provenance(config)

    log_path = out / "train_log.tsv"
    write_log_header(log_path, config)
    ckpt = out / "best.wpt"
    history: list[EpochRecord] = []
    best: EpochRecord | None = None
    n = len(train_entries)
    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            opt.zero_grad()
            model.zero_grad()
            out_ = model.forward_features(Tensor(train_e0[idx]))
            try:
                loss = wce_loss(out_.logits, list(labels[idx]), weights)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {start // config.batch_size}: {exc}") from exc
            if not math.isfinite(loss.item()):
                raise NumericError(f"epoch {epoch} batch {start // config.batch_size}: "
                                   f"loss diverged ({loss.item()}); try a smaller lr")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        rec = EpochRecord(epoch, total / count, dev_eer(model, dev_e0, dev_labels), opt.lr)
        history.append(rec)
        append_log(log_path, rec)
        if verbose:
            print(f"epoch {epoch:3d}  loss {rec.train_loss:.4f}  dev_eer {100 * rec.dev_eer:6.2f}%  "
                  f"lr {rec.lr:.3g}", flush=True)
        if best is None or rec.dev_eer < best.dev_eer:
            best = rec
            model.save_weights(ckpt, dict(meta, epoch=epoch, dev_eer=rec.dev_eer))

    checksum_end = frozen_checksum(model)
    if not config.paradigm.encoder_trainable and checksum_start != checksum_end:
        raise ContractError("frozen parameters changed during training")
    return TrainResult(ckpt, log_path, best.epoch, best.dev_eer, history, checksum_start, checksum_end)


def load_checkpoint(config: ExperimentConfig, path) -> Detector:
    model = build_model(config)
    meta = model.load_weights(path)
    digest = meta.get("config_digest")
    if digest is not None and digest != config.digest():
        raise ContractError(f"{path}: checkpoint digest {digest} does not match config {config.digest()}")
    return model


# -- benchmark protocols --------------------------------------------------------------------


def protocol_schedule(protocol: str, full_scale: bool = False) -> tuple[int, int]:
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    if protocol == "single-type":
        return SINGLE_TYPE_SCHEDULE if full_scale else DESK_SINGLE_TYPE_SCHEDULE
    return CO_TRAIN_SCHEDULE if full_scale else DESK_CO_TRAIN_SCHEDULE


def benchmark_runs(protocol: str, base: ExperimentConfig, bench_dir,
                   types=AUDIO_TYPES) -> list[tuple[str, ExperimentConfig]]:
    """One (row name, config) per training run; seeds derived per run from ``base.seed``."""
    bench = Path(bench_dir)
    evals = {t: str(bench / f"{manifest_name(t, 'eval')}") for t in types}
    if protocol == "single-type":
        sources = list(types)
    elif protocol == "co-train":
        sources = ["all"]
    else:
        raise ConfigError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    runs = []
    for i, src in enumerate(sources):
        cfg = replace(base, train_manifest=str(bench / manifest_name(src, "train")),
                      dev_manifest=str(bench / manifest_name(src, "dev")),
                      eval_manifests=dict(evals), seed=derive_seed(base.seed, i))
        runs.append((src if protocol == "single-type" else "co-train", cfg))
    return runs


def _run_one(args) -> dict:
    name, config, run_dir, verbose = args
    result = train(config, run_dir, verbose=verbose)
    model = load_checkpoint(config, result.checkpoint)
    meta = dict(provenance(config), run=name, best_epoch=result.best_epoch)
    return cross_type_eval(model, config.eval_manifests, run_dir, meta)


def run_benchmark(protocol: str, base: ExperimentConfig, bench_dir, out_dir, jobs: int = 1,
                  verbose: bool = False, plot: bool = True) -> ResultMatrix:
    """Train every run of the protocol, evaluate on all eval types, emit the EER matrix."""
    runs = benchmark_runs(protocol, base, bench_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(name, cfg, out / name, verbose) for name, cfg in runs]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, tasks))
    else:
        rows = [_run_one(t) for t in tasks]
    types = list(runs[0][1].eval_manifests)
    cells = np.array([[row[t] for t in types] for row in rows])
    matrix = ResultMatrix([name for name, _ in runs], types, cells)
    meta = dict(provenance(base), protocol=protocol, paradigm=base.paradigm.kind)
    matrix.to_tsv(out / "matrix.tsv", meta)
    payload = dict(meta, eer_percent={name: row for (name, _), row in zip(runs, rows)})
    write_json(out / "metrics.json", payload)
    if plot:
        from .plotting import plot_matrix
        plot_matrix(matrix, out / "matrix.png", title=f"{base.paradigm.kind} {protocol} EER (%)")
    return matrix


def rescore_benchmark(out_dir) -> ResultMatrix:
    """Rebuild the matrix from the persisted score files only."""
    from .evaluation import rescore_dir
    out = Path(out_dir)
    stored = ResultMatrix.from_tsv(out / "matrix.tsv")
    cells = np.array([[rescore_dir(out / name, stored.types)[t] for t in stored.types]
                      for name in stored.row_names])
    return ResultMatrix(stored.row_names, stored.types, cells)
