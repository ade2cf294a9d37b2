"""Command line: ``tempura generate|train|eval|report``.

Exit codes: 0 success, 2 configuration or input error, 3 numeric failure.
Log verbosity comes from ``TEMPURA_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import metrics
from .autodiff.checkpoint import CheckpointError
from .autodiff.tensor import NumericError
from .config import ConfigError, RunConfig, format_kv, merge, read_kv
from .data import (
    AnnotationParseError,
    GeneratorConfig,
    GeneratorConfigError,
    generate,
    read_annotations,
    write_annotations,
)
from .train import LOG_NAME, corpus_shape, evaluate_model, load_model, predict, train

log = logging.getLogger("tempura")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
REPORT_NAME = "report.json"


class InputError(Exception):
    pass


def _gen_config(args) -> GeneratorConfig:
    values = read_kv(args.config) if args.config else {}
    overrides = {"seed": args.seed, "n_videos": args.videos}
    try:
        cfg = merge(GeneratorConfig, values, overrides)
    except ConfigError as exc:
        raise GeneratorConfigError(exc.field, str(exc).split(": ", 1)[-1]) from None
    cfg.validate()
    return cfg


def cmd_generate(args) -> int:
    cfg = _gen_config(args)
    videos = generate(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_annotations(videos, out, generator=cfg)
    print(f"wrote {len(videos)} videos to {out}")
    return EXIT_OK


def _run_config(args) -> RunConfig:
    values = read_kv(args.config) if args.config else {}
    overrides = {
        "task": args.task, "epochs": args.epochs, "lr": args.lr, "lam": args.lam, "gmm_k": args.gmm_k,
        "eta": args.eta, "seed": args.seed,
        "mdu": False if args.no_mdu else None, "gmm_head": False if args.no_gmm else None,
        "ospu": False if args.no_ospu else None, "l_intra": False if args.no_intra else None,
    }
    return merge(RunConfig, values, overrides)


def _read_data(path):
    if not Path(path).is_file():
        raise InputError(f"annotation file not found: {path}")
    return read_annotations(path, with_header=True)


def cmd_train(args) -> int:
    cfg = _run_config(args)
    videos, header = _read_data(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.txt").write_text(format_kv(cfg.to_dict()), encoding="utf-8")
    result = train(cfg, videos, out_dir=out, header=header)
    last = result.history[-1]
    print(f"trained {cfg.epochs} epochs on {len(videos)} videos; final loss {last['loss_total']:.6f}; "
          f"checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise InputError(f"checkpoint not found: {args.checkpoint}")
    model, run, meta = load_model(args.checkpoint)
    if args.task is not None and args.task != model.cfg.task:
        raise ConfigError("task", f"checkpoint was trained for {model.cfg.task}, not {args.task}")
    videos, header = _read_data(args.data)
    n_obj, n_pred, feat_dim = corpus_shape(videos)
    mc = model.cfg
    if feat_dim != mc.feat_dim or n_obj > mc.n_obj_classes or n_pred > mc.n_pred_classes:
        raise ConfigError("data", f"corpus shape (objects {n_obj}, predicates {n_pred}, features {feat_dim}) "
                                  f"does not fit the checkpoint ({mc.n_obj_classes}, {mc.n_pred_classes}, "
                                  f"{mc.feat_dim})")
    pooling = args.pooling or run.pooling
    report = evaluate_model(model, videos, meta.get("train_counts"), pooling=pooling,
                            iou_threshold=run.iou_threshold)
    report.extra["checkpoint_epoch"] = meta.get("epoch")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_report(report, out)
    if args.predictions:
        pred = predict(model, videos)
        for regime in metrics.REGIMES:
            ranked = [metrics.rank_triplets(p, regime) for p in pred.pairs]
            metrics.write_predictions(ranked, f"{args.predictions}.{regime}.jsonl",
                                      max_candidates=max(metrics.DEFAULT_KS))
    r, m = report.recall["with"], report.mean_recall["with"]
    print(f"{report.task} with-constraint R@10/20/50 = {r['10']:.4f}/{r['20']:.4f}/{r['50']:.4f}  "
          f"mR@10/20/50 = {m['10']:.4f}/{m['20']:.4f}/{m['50']:.4f}")
    return EXIT_OK


def _num(v) -> str:
    return "nan" if v is None else json.dumps(v)


def read_log(run_dir) -> list[dict]:
    path = Path(run_dir) / LOG_NAME
    if not path.is_file():
        raise InputError(f"no training log in {run_dir}")
    rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not rows:
        raise InputError(f"training log {path} is empty")
    return rows


def uncertainty_table(rows: list[dict]) -> str:
    lines = ["epoch\tu_al\tu_ep\tu_total"]
    for r in rows:
        tot = None if r.get("u_al") is None or r.get("u_ep") is None else r["u_al"] + r["u_ep"]
        lines.append(f"{r['epoch']}\t{_num(r.get('u_al'))}\t{_num(r.get('u_ep'))}\t{_num(tot)}")
    return "\n".join(lines) + "\n"


def loss_table(rows: list[dict]) -> str:
    keys = sorted({k for r in rows for k in r if k.startswith("loss_")})
    lines = ["epoch\tlr\t" + "\t".join(keys)]
    for r in rows:
        lines.append(f"{r['epoch']}\t{_num(r['lr'])}\t" + "\t".join(_num(r.get(k)) for k in keys))
    return "\n".join(lines) + "\n"


def recall_table(report: metrics.MetricReport, regime: str = "with", k: int = 10) -> str:
    lines = ["class\tgt_count\ttrain_count\trecall"]
    for c, rec in enumerate(report.per_class_recall[regime][str(k)]):
        lines.append(f"{c}\t{report.gt_counts[c]}\t{report.train_counts[c]}\t{_num(rec)}")
    return "\n".join(lines) + "\n"


def cmd_report(args) -> int:
    run = Path(args.run)
    if not run.is_dir():
        raise InputError(f"run directory not found: {run}")
    rows = read_log(run)
    out = Path(args.out) if args.out else run
    out.mkdir(parents=True, exist_ok=True)
    tables = {"uncertainty.tsv": uncertainty_table(rows), "loss.tsv": loss_table(rows)}
    report_path = Path(args.report) if args.report else run / REPORT_NAME
    if report_path.is_file():
        tables["per_class_recall.tsv"] = recall_table(metrics.read_report(report_path))
    for name, text in tables.items():
        (out / name).write_text(text, encoding="utf-8")
        print(f"# {name}")
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tempura", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic annotation corpus")
    g.add_argument("--config", help="key = value generator config file")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--videos", type=int)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train on an annotation file")
    t.add_argument("--config", help="key = value run config file")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--task", choices=("predcls", "sgcls", "sgdet"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--gmm-k", dest="gmm_k", type=int)
    t.add_argument("--eta", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-mdu", action="store_true")
    t.add_argument("--no-gmm", action="store_true")
    t.add_argument("--no-ospu", action="store_true")
    t.add_argument("--no-intra", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--task", choices=("predcls", "sgcls", "sgdet"))
    e.add_argument("--pooling", choices=("pooled", "per_frame"))
    e.add_argument("--predictions", help="prefix for ranked prediction files (one per regime)")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="summarize a training run")
    r.add_argument("--run", required=True)
    r.add_argument("--out")
    r.add_argument("--report", help="MetricReport JSON (default: <run>/report.json)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    level = os.environ.get("TEMPURA_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NumericError as exc:  # includes NumericFailure
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GeneratorConfigError, AnnotationParseError, CheckpointError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
