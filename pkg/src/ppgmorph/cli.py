"""Command-line entry point: one subcommand per pipeline stage.

    ppgmorph ingest      raw traces (or a synthetic cohort) -> canonical CSV records
    ppgmorph preprocess  records -> segment store (.ppgs) + drop-count CSV
    ppgmorph morphology  store -> per-segment sVRI / IPA / SQI labels
    ppgmorph pretrain    store (+ labels) -> checkpoints + loss log
    ppgmorph embed       checkpoint + store -> embedding store
    ppgmorph probe       embeddings + task table -> CSV/markdown probe report
    ppgmorph report      loss log / embeddings / probe CSVs -> figures and tables
    ppgmorph selftest    gradient checks and the NT-Xent loop oracle

Every command accepts ``--config`` (JSON; default from $PPGMORPH_CONFIG) and
``--seed``, which overrides the config seed and drives all randomness.
Failures print one JSON object on stderr and exit 1; bad usage exits 2.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .autodiff.checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .model import ModelConfigError
from .preprocess import PreprocessError
from .ssl import TrainConfigError, TrainingDiverged
from .waveform_io import WaveformError

EXPECTED_ERRORS = (ConfigError, TrainConfigError, ModelConfigError, CheckpointError, WaveformError,
                   PreprocessError, TrainingDiverged, ValueError, OSError)


class CliError(Exception):
    """Missing or inconsistent inputs detected by the CLI itself."""


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"missing {what}: {p}")
    return p


def _parse_split(text: str):
    try:
        parts = [float(v) for v in text.split("/")]
    except ValueError:
        raise CliError(f"--split must look like 60/20/20, got {text!r}") from None
    if len(parts) != 3 or any(v < 0 for v in parts) or sum(parts) <= 0:
        raise CliError(f"--split must be three nonnegative numbers, got {text!r}")
    total = sum(parts)
    return tuple(v / total for v in parts)


def _record_files(directory: Path, fmt: str):
    pattern = "*.csv" if fmt == "csv" else "*.bin"
    files = sorted(p for p in directory.glob(pattern) if p.name != "tasks.csv")
    if not files:
        raise CliError(f"no {pattern} records in {directory}")
    return files


def _say(msg: str):
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    from .waveform_io import load_record, write_record

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        from .synthetic import CorpusSpec, subject_record

        spec = CorpusSpec(n_subjects=args.synthetic, segments_per_subject=args.segments_per_subject)
        rng = np.random.default_rng(_run_config(args).seed)
        with open(out / "tasks.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("subject_id", "notch_rich", "notch_depth"))
            for s in range(spec.n_subjects):
                rec, cls, depth = subject_record(spec, s, rng)
                write_record(rec, out / f"{rec.subject_id}.csv")
                w.writerow((rec.subject_id, cls, repr(float(depth))))
        _say(f"wrote {spec.n_subjects} synthetic records and tasks.csv to {out}")
        return 0
    if not args.input:
        raise CliError("ingest needs --in DIR or --synthetic N")
    files = _record_files(_require(args.input, "input directory"), args.format)
    for p in files:
        rec = load_record(p, args.format, args.fs, source_tag=args.source_tag)
        write_record(rec, out / f"{rec.subject_id}.csv")
    _say(f"wrote {len(files)} records to {out}")
    return 0


def _preprocess_one(job):
    from .preprocess import preprocess_pipeline
    from .waveform_io import load_record

    path, cfg = job
    rec = load_record(path)
    segs, report = preprocess_pipeline(rec, cfg)
    return [(s.values, s.subject_id, s.index, s.source_tag) for s in segs], report


def cmd_preprocess(args) -> int:
    from .waveform_io import write_store

    cfg = _run_config(args).preprocess
    over = {}
    if args.window_s is not None:
        over["window_s"] = args.window_s
    if args.flat_thresh is not None:
        over["flat_threshold"] = args.flat_thresh
    cfg = dataclasses.replace(cfg, **over)
    if not 0.0 <= cfg.flat_threshold <= 1.0 or not cfg.window_s > 0:
        raise ConfigError("flat threshold must lie in [0, 1] and window length be positive")
    files = _record_files(_require(args.input, "input directory"), "csv")
    jobs = [(p, cfg) for p in files]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_preprocess_one, jobs))
    else:
        results = [_preprocess_one(j) for j in jobs]
    values, meta = [], []
    for segs, _ in results:
        for v, sid, idx, tag in segs:
            values.append(v)
            meta.append({"subject_id": sid, "index": idx, "source_tag": tag})
    if not values:
        raise CliError("no segment survived preprocessing")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_store(values, meta, out, cfg.target_fs)
    drops = Path(args.drops) if args.drops else out.with_suffix(".drops.csv")
    with open(drops, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("subject_id", "n_windows", "n_kept", "n_flat", "n_zero_variance", "n_dropped"))
        for _, r in results:
            w.writerow((r.subject_id, r.n_windows, r.n_kept, r.n_flat, r.n_zero_variance, r.n_dropped))
    _say(f"{len(values)} segments from {len(files)} records -> {out} (drop counts: {drops})")
    return 0


def cmd_morphology(args) -> int:
    from .morphology import label_segments, write_labels
    from .waveform_io import read_store

    cfg = _run_config(args)
    segments, meta, fs = read_store(_require(args.store, "segment store"))
    table, edges = label_segments(segments, fs, b=cfg.train.n_bins)
    write_labels(args.out, table, [m["subject_id"] for m in meta], edges)
    _say(f"labelled {int(table.valid.sum())}/{len(table)} segments -> {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    from .morphology import read_labels
    from .waveform_io import read_store

    cfg = _run_config(args)
    over = {"mode": args.mode.upper()}
    for name in ("steps", "alpha", "lr", "batch_pairs", "temperature", "checkpoint_every"):
        v = getattr(args, name)
        if v is not None:
            over[name] = v
    # validates alpha, steps, ... before any data is touched
    tcfg = cfg.train_config(**over)
    if tcfg.mode == "S" and not args.labels:
        raise CliError("S-mode pretraining needs --labels")
    segments, meta, fs = read_store(_require(args.store, "segment store"))
    subject_ids = np.array([m["subject_id"] for m in meta])
    if segments.shape[1] != cfg.model.input_len:
        raise ConfigError(f"store segments have length {segments.shape[1]}, "
                          f"model.input_len is {cfg.model.input_len}")
    labels = edges = None
    if tcfg.mode == "S":
        labels, label_ids, edges = read_labels(_require(args.labels, "label table"))
        if list(label_ids) != list(subject_ids):
            raise CliError("label table rows do not match the store")
    tcfg = dataclasses.replace(tcfg, fs_hz=fs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps({**cfg.to_dict(), "config_hash": cfg.hash()}, indent=2))
    every = max(1, tcfg.steps // 20) if tcfg.steps else 1

    def progress(step, row):
        if not args.quiet and (step % every == 0 or step == tcfg.steps):
            _say(f"step {step}/{tcfg.steps} loss {float(row[1]):.4f}")

    from .ssl import train

    result = train(segments, subject_ids, tcfg, labels, edges, cfg.model, out, cfg.augment(tcfg.mode),
                   progress)
    _say(f"wrote {len(result.checkpoints)} checkpoint(s) and loss_log.csv to {out}")
    return 0


def cmd_embed(args) -> int:
    from .eval import extract_embeddings
    from .waveform_io import read_store, write_store

    store = _require(args.store, "segment store")
    es = extract_embeddings(_require(args.ckpt, "checkpoint"), store, args.batch_size)
    _, meta, _ = read_store(store)
    write_store(es.matrix, meta, args.out, 0.0)
    _say(f"{len(es)} embeddings of dim {es.matrix.shape[1]} -> {args.out}")
    return 0


def _task_labels(path: Path, task: str, meta):
    """Per-row labels from a task table keyed by subject_id (and optionally index)."""
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        fields = reader.fieldnames or []
    if "subject_id" not in fields:
        raise CliError(f"{path}: task table needs a subject_id column")
    if task not in fields:
        raise CliError(f"{path}: no task column {task!r} (have {', '.join(fields)})")
    per_segment = "index" in fields
    table = {}
    for r in rows:
        key = (r["subject_id"], int(r["index"])) if per_segment else r["subject_id"]
        table[key] = r[task]
    out = []
    for m in meta:
        key = (m["subject_id"], int(m["index"])) if per_segment else m["subject_id"]
        out.append(table.get(key, ""))
    return out


def cmd_probe(args) -> int:
    from .eval import EmbeddingSet, run_probe
    from .reporting import emit_report
    from .waveform_io import read_store

    cfg = _run_config(args)
    ratios = _parse_split(args.split) if args.split else cfg.eval.ratios
    matrix, meta, _ = read_store(_require(args.emb, "embedding file"))
    raw = _task_labels(_require(args.labels, "task table"), args.task, meta)
    keep = np.array([v.strip() not in ("", "nan", "NaN") for v in raw])
    if keep.sum() < 3:
        raise CliError(f"task {args.task!r} has labels for only {int(keep.sum())} rows")
    if args.kind == "multiclass":
        labels = np.array([v.strip() for v in raw], dtype=object)
    else:
        labels = np.array([float(v) if k else np.nan for v, k in zip(raw, keep)])
    es = EmbeddingSet(matrix, [m["subject_id"] for m in meta], labels,
                      np.array([m["index"] for m in meta])).subset(np.flatnonzero(keep))
    if args.kind == "multiclass":
        es.labels = es.labels.astype(str)
    n_boot = args.n_boot or cfg.eval.n_boot
    rep = run_probe(es, args.task, args.kind, ratios, cfg.seed, n_boot, args.pool)
    csv_path, md_path = emit_report([rep], args.report, cfg.hash(), cfg.seed, stem=f"probe_{args.task}")
    _say(f"{args.task}: {rep.metric} {rep.formatted()} (n={rep.n_test}) -> {csv_path}, {md_path}")
    return 0


def cmd_report(args) -> int:
    from . import reporting as R

    if not (args.loss_log or args.emb or args.probe):
        raise CliError("report needs at least one of --loss-log, --emb, --probe")
    cfg = _run_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    made = []
    if args.loss_log:
        log = R.read_loss_log(_require(args.loss_log, "loss log"))
        if not log:
            raise CliError(f"{args.loss_log}: empty loss log")
        made.append(R.plot_loss_curve(log, out / "loss_curve.png", args.window))
        from .ssl import smoothed
        with open(out / "loss_summary.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("column", "first", "last", "smoothed_last"))
            for k, v in log.items():
                if k == "step" or np.all(np.isnan(v)):
                    continue
                w.writerow((k, repr(float(v[0])), repr(float(v[-1])), repr(float(smoothed(v, args.window)[-1]))))
        made.append(out / "loss_summary.csv")
    if args.emb:
        from .eval import EmbeddingSet, pairwise_distances
        from .waveform_io import read_store

        matrix, meta, _ = read_store(_require(args.emb, "embedding file"))
        es = EmbeddingSet(matrix, [m["subject_id"] for m in meta])
        res = pairwise_distances(es, cfg.eval.distance_metric)
        made.append(R.plot_distance_histogram(res.values, out / "distance_histogram.png",
                                              cfg.eval.distance_metric))
        made.append(R.write_histogram_csv(res.hist_counts, res.hist_edges, out / "distance_histogram.csv"))
    if args.probe:
        reports = []
        for p in args.probe:
            reports.extend(R.read_report(_require(p, "probe report")))
        if not reports:
            raise CliError("probe report files contain no rows")
        made.extend(R.emit_report(reports, out, cfg.hash(), None, stem="summary"))
        made.append(R.plot_ci(reports, out / "probe_ci.png"))
    for p in made:
        _say(str(p))
    return 0


def cmd_selftest(args) -> int:
    from .autodiff.gradcheck import gradcheck
    from .selftest import run_ntxent_oracle, run_op_checks, s_mode_loss_case

    seed = _run_config(args).seed
    worst = {}
    for name, err in run_op_checks(args.shapes, seed):
        worst[name] = max(worst.get(name, 0.0), err)
    for name, err in worst.items():
        _say(f"gradcheck {name:<14s} ok  max rel err {err:.2e}")
    fn, params = s_mode_loss_case(seed)
    _say(f"gradcheck {'s_mode_loss':<14s} ok  max rel err {gradcheck(fn, params):.2e}")
    diff = run_ntxent_oracle(args.batches, seed)
    if diff > 1e-6:
        raise AssertionError(f"NT-Xent differs from the loop oracle by {diff:.3e}")
    _say(f"ntxent oracle  ok  max |diff| {diff:.2e} over {args.batches} batches")
    return 0


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (default: $PPGMORPH_CONFIG, else built-in defaults)")
    common.add_argument("--seed", type=int, help="overrides the config seed")

    parser = argparse.ArgumentParser(prog="ppgmorph", description="PPG morphology-aware self-supervised toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", parents=[common], help="normalise raw traces into CSV records")
    p.add_argument("--in", dest="input", help="directory of raw traces")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("csv", "binary"), default="csv")
    p.add_argument("--fs", type=float, help="sampling rate (required for binary input)")
    p.add_argument("--source-tag", default="")
    p.add_argument("--synthetic", type=int, metavar="N", help="write N synthetic subjects instead")
    p.add_argument("--segments-per-subject", type=int, default=20)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("preprocess", parents=[common], help="filter, segment and normalise records")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window-s", type=float)
    p.add_argument("--flat-thresh", type=float)
    p.add_argument("--drops", help="drop-count CSV (default: <out>.drops.csv)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("morphology", parents=[common], help="sVRI / IPA / SQI labels per segment")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_morphology)

    p = sub.add_parser("pretrain", parents=[common], help="contrastive pretraining")
    p.add_argument("--mode", choices=("s", "p", "S", "P"), default="s")
    p.add_argument("--store", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-pairs", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("embed", parents=[common], help="projected embeddings for a store")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("probe", parents=[common], help="linear probe with bootstrap CI")
    p.add_argument("--emb", required=True)
    p.add_argument("--labels", required=True, help="task table (subject_id[,index],<task>...)")
    p.add_argument("--task", required=True)
    p.add_argument("--kind", choices=("binary", "regression", "multiclass"), default="binary")
    p.add_argument("--split", help="train/val/test percentages, e.g. 60/20/20")
    p.add_argument("--report", required=True, help="output directory")
    p.add_argument("--pool", action="store_true", help="mean-pool embeddings per subject first")
    p.add_argument("--n-boot", type=int)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("report", parents=[common], help="figures and tables from run outputs")
    p.add_argument("--out", required=True)
    p.add_argument("--loss-log")
    p.add_argument("--emb")
    p.add_argument("--probe", nargs="+")
    p.add_argument("--window", type=int, default=50)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selftest", parents=[common], help="gradient checks and loss oracle")
    p.add_argument("--shapes", type=int, default=2, help="random shapes per op")
    p.add_argument("--batches", type=int, default=200)
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, AssertionError, *EXPECTED_ERRORS) as exc:
        err = {"error": type(exc).__name__, "command": args.command, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
