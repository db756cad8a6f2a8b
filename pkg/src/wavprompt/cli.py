"""``wavprompt`` command-line entry point.

Every command writes into its own run directory, ``<out-root>/<timestamp>-<digest>``
unless ``--run-dir`` pins it, and every file it writes carries the config
digest and seed. Config values resolve as flag > config file > default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import archive
from .config import ExperimentConfig, desk_lr, load_config, parse_sections, read_sections, save_config
from .data import AUDIO_TYPES, SyntheticSpec, load_clips, make_benchmark, manifest_name, pcm_to_float, read_manifest
from .errors import WavPromptError
from .evaluation import (ResultMatrix, cross_type_eval, export_attention, export_embeddings,
                         format_param_report, param_report_for_config, write_json)
from .trainer import (PROTOCOLS, load_checkpoint, protocol_schedule, provenance, read_log, run_benchmark,
                      train)

FORMATS_HELP = """\
file formats:
  config     INI sections [paradigm] [encoder] [head] [data] [schedule]
  manifest   TSV: clip_id, path, audio_type, label, split (paths relative to the manifest)
  scores     TSV: clip_id, score, label, audio_type; score = logit_real - logit_fake
  metrics    JSON with eer_percent per type and AVG, config_digest, seed
  matrix     TSV: condition, <types...>, AVG (EER in percent)
  log        TSV: epoch, train_loss, dev_eer, lr
  checkpoint binary tensor archive (.wpt) with a JSON metadata block
  '#' lines at the top of TSV files hold metadata (config_digest, seed, ...)
"""

# flag dest -> (config section, key)
CONFIG_FLAGS = {
    "paradigm": ("paradigm", "kind"), "p": ("paradigm", "p"), "w": ("paradigm", "w"),
    "wpt_mode": ("paradigm", "wpt_mode"),
    "sample_rate": ("encoder", "sample_rate"), "clip_len": ("encoder", "clip_len"),
    "model_dim": ("encoder", "model_dim"), "num_layers": ("encoder", "num_layers"),
    "num_heads": ("encoder", "num_heads"), "ffn_dim": ("encoder", "ffn_dim"),
    "frontend": ("encoder", "frontend"), "encoder_seed": ("encoder", "seed"),
    "proj_dim": ("head", "proj_dim"), "pool_heads": ("head", "pool_heads"), "mlp_dims": ("head", "mlp_dims"),
    "train_manifest": ("data", "train_manifest"), "dev_manifest": ("data", "dev_manifest"),
    "lr": ("schedule", "lr"), "batch_size": ("schedule", "batch_size"), "epochs": ("schedule", "epochs"),
    "lr_halving_period": ("schedule", "lr_halving_period"), "seed": ("schedule", "seed"),
    "class_weights": ("schedule", "class_weights"),
}


def _add_config_flags(p: argparse.ArgumentParser, data: bool = True) -> None:
    g = p.add_argument_group("config (flag > --config file > default)")
    g.add_argument("--config", help="INI config file")
    g.add_argument("--paradigm", choices=["FR", "FT", "PT", "WPT", "ShallowPT", "AfterPT", "DelPT"])
    g.add_argument("--p", type=int, help="prompt tokens per layer")
    g.add_argument("--w", type=int, help="wavelet prompt tokens per layer (WPT, multiple of 4)")
    g.add_argument("--wpt-mode", choices=["every-forward", "at-init"])
    g.add_argument("--sample-rate", type=int)
    g.add_argument("--clip-len", type=int, help="samples per clip")
    g.add_argument("--model-dim", type=int)
    g.add_argument("--num-layers", type=int)
    g.add_argument("--num-heads", type=int)
    g.add_argument("--ffn-dim", type=int)
    g.add_argument("--frontend", help="conv specs 'channels/kernel/stride, ...'")
    g.add_argument("--encoder-seed", type=int, help="seed of the frozen random encoder")
    g.add_argument("--proj-dim", type=int)
    g.add_argument("--pool-heads", type=int)
    g.add_argument("--mlp-dims", help="comma-separated hidden widths of the head MLP")
    if data:
        g.add_argument("--train-manifest")
        g.add_argument("--dev-manifest")
        g.add_argument("--eval-manifest", action="append", default=None, metavar="TYPE=PATH",
                       help="repeatable")
    g.add_argument("--lr", type=float, help="initial lr (default 1e-6 for FT, 5e-4 otherwise)")
    g.add_argument("--batch-size", type=int, help="default 14 for FT, 32 otherwise")
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr-halving-period", type=int, help="epochs between lr halvings")
    g.add_argument("--seed", type=int)
    g.add_argument("--class-weights", help="'weight_real, weight_fake'; default inverse frequency")


def resolve_config(args, extra: dict | None = None) -> ExperimentConfig:
    sections = read_sections(args.config) if getattr(args, "config", None) else {}
    file_kind = sections.get("paradigm", {}).get("kind")
    if getattr(args, "paradigm", None) and file_kind not in (None, args.paradigm):
        # token counts from the file belong to the file's paradigm, not the flag's
        for key in ("p", "w"):
            sections["paradigm"].pop(key, None)
    for name, value in (extra or {}).items():
        section, key = CONFIG_FLAGS[name]
        sections.setdefault(section, {}).setdefault(key, str(value))
    for dest, (section, key) in CONFIG_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            sections.setdefault(section, {})[key] = str(value)
    evals = getattr(args, "eval_manifest", None)
    if evals:
        sections.setdefault("data", {})["eval_manifests"] = ", ".join(evals)
    return parse_sections(sections)


def make_run_dir(args, digest: str) -> Path:
    if getattr(args, "run_dir", None):
        path = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(args.out_root) / f"{stamp}-{digest}"
        n = 1
        while path.exists():
            path = Path(args.out_root) / f"{stamp}-{digest}-{n}"
            n += 1
    path.mkdir(parents=True, exist_ok=True)
    return path


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-root", default="runs", help="parent of the run directory (default: runs)")
    p.add_argument("--run-dir", help="use this exact run directory instead of <out-root>/<timestamp>-<digest>")


def _run_config(run: Path) -> ExperimentConfig:
    cfg_path = run / "config.ini"
    if not cfg_path.exists():
        raise FileNotFoundError(f"{run}: no config.ini (is this a training run directory?)")
    return load_config(cfg_path)


def _load_run(run: str):
    run = Path(run)
    config = _run_config(run)
    ckpt = run / "best.wpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"{run}: no best.wpt checkpoint")
    return config, load_checkpoint(config, ckpt)


# -- commands ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(train=args.train, dev=args.dev, eval=args.eval, sample_rate=args.sample_rate,
                         clip_len=args.clip_len, seed=args.seed, artifact_strength=args.artifact_strength,
                         real_fraction=args.real_fraction,
                         type_specific_artifacts=not args.shared_artifact)
    out = make_run_dir(args, spec.digest())
    manifests = make_benchmark(spec, out)
    print(f"benchmark written to {out}")
    print(f"{'manifest':<16}{'clips':>8}")
    for stem, path in manifests.items():
        print(f"{stem:<16}{len(read_manifest(path)):>8}")
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    out = make_run_dir(args, config.digest())
    print(f"run directory: {out}  (digest {config.digest()}, seed {config.seed})")
    result = train(config, out, verbose=not args.quiet)
    print(f"best epoch {result.best_epoch}: dev EER {100 * result.best_dev_eer:.2f}%  -> {result.checkpoint}")
    from .plotting import plot_training_curve
    plot_training_curve(result.history, out / "training_curve.png",
                        title=f"{config.paradigm.kind} training")
    if config.eval_manifests:
        model = load_checkpoint(config, result.checkpoint)
        row = cross_type_eval(model, config.eval_manifests, out, provenance(config))
        _print_row(config.paradigm.kind, row, out, config)
    return 0


def _print_row(name: str, row: dict, out: Path, config: ExperimentConfig) -> None:
    types = [t for t in row if t != "AVG"]
    matrix = ResultMatrix([name], tuple(types), np.array([[row[t] for t in types]]))
    matrix.to_tsv(out / "matrix.tsv", provenance(config))
    print(matrix.format_table())


def _eval_manifests(args, config: ExperimentConfig) -> dict:
    if args.manifest:
        return dict(item.split("=", 1) if "=" in item else (Path(item).stem, item) for item in args.manifest)
    if args.bench:
        return {t: str(Path(args.bench) / manifest_name(t, "eval")) for t in AUDIO_TYPES}
    if config.eval_manifests:
        return dict(config.eval_manifests)
    raise WavPromptError("no evaluation manifests: pass --manifest or --bench")


def cmd_eval(args) -> int:
    config, model = _load_run(args.run)
    manifests = _eval_manifests(args, config)
    for path in manifests.values():
        if not Path(path).exists():
            raise FileNotFoundError(f"manifest not found: {path}")
    out = make_run_dir(args, config.digest())
    save_config(config, out / "config.ini")
    row = cross_type_eval(model, manifests, out, dict(provenance(config), checkpoint=str(Path(args.run) / "best.wpt")))
    _print_row(config.paradigm.kind, row, out, config)
    print(f"scores and metrics written to {out}")
    return 0


def cmd_benchmark(args) -> int:
    epochs, period = protocol_schedule(args.protocol, full_scale=args.full_schedule)
    preset = {"epochs": epochs, "lr_halving_period": period}
    if not args.full_schedule:
        kind = args.paradigm or (read_sections(args.config).get("paradigm", {}).get("kind") if args.config else None)
        preset["lr"] = desk_lr(kind or "WPT")
    config = resolve_config(args, extra=preset)
    bench = Path(args.bench)
    if not (bench / "benchmark.json").exists():
        raise FileNotFoundError(f"{bench}: not a generated benchmark (missing benchmark.json)")
    out = make_run_dir(args, config.digest())
    save_config(config, out / "config.ini")
    print(f"run directory: {out}  (digest {config.digest()}, seed {config.seed})")
    matrix = run_benchmark(args.protocol, config, bench, out, jobs=args.jobs, verbose=not args.quiet)
    print(matrix.format_table())
    return 0


def _artifact_provenance(path: Path) -> dict:
    if path.suffix == ".wpt":
        _, meta = archive.load(path)
        return meta
    if path.suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            key, sep, value = body.partition("\t")
            if not sep:
                key, sep, value = body.partition("=")
            meta[key.strip()] = value.strip()
    return meta


def cmd_inspect(args) -> int:
    target = Path(args.path)
    if target.is_dir():
        target = target / "best.wpt" if (target / "best.wpt").exists() else target / "config.ini"
    if not target.exists():
        raise FileNotFoundError(f"not found: {target}")
    config_path = target.parent / "config.ini"
    config = load_config(config_path) if config_path.exists() else None
    meta = {} if target.suffix == ".ini" else _artifact_provenance(target)
    digest, seed = meta.get("config_digest"), meta.get("seed")
    print(f"artifact:      {target}")
    if target.suffix != ".ini":
        print(f"sha256:        {hashlib.sha256(target.read_bytes()).hexdigest()}")
        print(f"config digest: {digest}")
        print(f"seed:          {seed}")
    for key in ("epoch", "dev_eer", "run", "protocol", "best_epoch"):
        if key in meta:
            print(f"{key + ':':<15}{meta[key]}")
    status = 0
    if config is not None:
        print(f"paradigm:      {config.paradigm.kind} (p={config.paradigm.p}, w={config.paradigm.w})")
        print(f"run config:    {config_path} (digest {config.digest()}, seed {config.seed})")
        if digest is not None:
            ok = str(digest) == config.digest()
            print(f"provenance:    {'OK' if ok else 'MISMATCH'}")
            status = 0 if ok else 1
        print(format_param_report(param_report_for_config(config.paradigm, config.encoder, config.head)))
    log = target.parent / "train_log.tsv"
    if log.exists() and target.suffix == ".wpt":
        best = min(read_log(log), key=lambda r: (r.dev_eer, r.epoch))
        print(f"log best:      epoch {best.epoch}, dev EER {100 * best.dev_eer:.2f}%")
    return status


def _pick_clip(manifest: str, clip_id: str | None, index: int):
    entries = read_manifest(manifest)
    if clip_id is not None:
        matches = [e for e in entries if e.clip_id == clip_id]
        if not matches:
            raise WavPromptError(f"{manifest}: no clip {clip_id!r}")
        entry = matches[0]
    else:
        if not 0 <= index < len(entries):
            raise WavPromptError(f"{manifest}: index {index} outside 0..{len(entries) - 1}")
        entry = entries[index]
    return entry


def cmd_export_attn(args) -> int:
    config, model = _load_run(args.run)
    entry = _pick_clip(args.manifest, args.clip_id, args.index)
    wave = pcm_to_float(load_clips(args.manifest, [entry], config.encoder.clip_len))[0]
    out = make_run_dir(args, config.digest())
    path = out / "attention.tsv"
    attn = export_attention(model, wave, path, dict(provenance(config), clip_id=entry.clip_id))
    from .evaluation import read_attention
    from .plotting import plot_attention
    _, legend = read_attention(path)
    plot_attention(attn, legend, out / "attention.png", title=f"{config.paradigm.kind}: {entry.clip_id}")
    groups = {}
    for lab in legend:
        groups[lab] = groups.get(lab, 0) + 1
    print(f"attention ({attn.shape[0]}x{attn.shape[1]}) for {entry.clip_id} -> {path}")
    print("rows: " + ", ".join(f"{k}={v}" for k, v in groups.items()))
    return 0


def cmd_export_emb(args) -> int:
    config, model = _load_run(args.run)
    out = make_run_dir(args, config.digest())
    path = out / "embeddings.tsv"
    n = export_embeddings(model, args.manifest, args.per_cell, path, seed=args.seed,
                          meta=dict(provenance(config), sample_seed=args.seed))
    rows = [ln.rstrip("\n").split("\t") for ln in open(path, encoding="utf-8") if not ln.startswith("#")][1:]
    emb = np.array([[float(v) for v in r[3:]] for r in rows])
    groups = [f"{r[1]}/{r[2]}" for r in rows]
    from .plotting import plot_embeddings
    if n >= 2:
        plot_embeddings(emb, groups, out / "embeddings.png", title=f"{config.paradigm.kind} embeddings")
    print(f"{n} embeddings -> {path}")
    return 0


def cmd_param_report(args) -> int:
    if args.run:
        config = _run_config(Path(args.run))
    else:
        config = resolve_config(args)
    if args.full_scale:
        from .encoder import EncoderConfig
        from .head import HeadConfig
        config = ExperimentConfig(paradigm=config.paradigm, encoder=EncoderConfig.full_scale(),
                                  head=HeadConfig.full_scale(), seed=config.seed)
    report = param_report_for_config(config.paradigm, config.encoder, config.head)
    out = make_run_dir(args, config.digest())
    write_json(out / "param_report.json", dict(report, **provenance(config)))
    print(format_param_report(report))
    return 0


# -- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wavprompt", description=__doc__,
                                     epilog=FORMATS_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic four-type benchmark")
    p.add_argument("--train", type=int, default=500, help="clips per type in train (default 500)")
    p.add_argument("--dev", type=int, default=100, help="clips per type in dev (default 100)")
    p.add_argument("--eval", type=int, default=200, help="clips per type in eval (default 200)")
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--clip-len", type=int, default=16000, help="samples per clip")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--artifact-strength", type=float, default=0.7)
    p.add_argument("--real-fraction", type=float, default=0.5)
    p.add_argument("--shared-artifact", action="store_true",
                   help="use one artifact band for all types instead of one per type")
    _add_run_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model; writes best.wpt and train_log.tsv")
    _add_config_flags(p)
    p.add_argument("--quiet", action="store_true")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score manifests with a trained run; writes scores and metrics")
    p.add_argument("--run", required=True, help="training run directory (config.ini + best.wpt)")
    p.add_argument("--manifest", action="append", metavar="[TYPE=]PATH", help="repeatable")
    p.add_argument("--bench", help="benchmark directory; evaluates every <type>_eval.tsv")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("benchmark", help="run the single-type or co-train protocol")
    p.add_argument("--protocol", choices=PROTOCOLS, required=True)
    p.add_argument("--bench", required=True, help="benchmark directory from gen-data")
    p.add_argument("--jobs", type=int, default=1, help="parallel training runs")
    p.add_argument("--full-schedule", action="store_true",
                   help="full-scale schedule: 50 epochs halving every 10 (single-type) or 20/4 (co-train) at the "
                        "default lr, instead of the desk preset (10 epochs halving every 2 at 4x that lr)")
    _add_config_flags(p, data=False)
    p.add_argument("--quiet", action="store_true")
    _add_run_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("inspect", help="show provenance and parameter counts of a run or artifact")
    p.add_argument("path", help="run directory, checkpoint, or any output file")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("export-attn", help="export the last-layer attention map of one clip")
    p.add_argument("--run", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--clip-id")
    p.add_argument("--index", type=int, default=0, help="manifest row when --clip-id is not given")
    _add_run_flags(p)
    p.set_defaults(func=cmd_export_attn)

    p = sub.add_parser("export-emb", help="export head embeddings sampled per (type, label) cell")
    p.add_argument("--run", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--per-cell", type=int, default=100, help="clips per (type, label) cell (default 100)")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    _add_run_flags(p)
    p.set_defaults(func=cmd_export_emb)

    p = sub.add_parser("param-report", help="trainable vs frozen parameter counts")
    p.add_argument("--run", help="take the config from a run directory")
    p.add_argument("--full-scale", action="store_true", help="XLSR-300M geometry with the 0.45M head")
    _add_config_flags(p, data=False)
    _add_run_flags(p)
    p.set_defaults(func=cmd_param_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (WavPromptError, OSError, ValueError, ArithmeticError) as exc:
        print(f"wavprompt {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
