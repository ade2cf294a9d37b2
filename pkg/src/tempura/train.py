"""End-to-end training (one video per step) and per-task evaluation."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .autodiff import AdamW, backward
from .autodiff.checkpoint import load_checkpoint, save_checkpoint
from .autodiff.tensor import NumericError, no_grad
from .config import ConfigError, RunConfig
from .data import VideoAnnotation, predicate_counts
from .memory import MemoryBank, compute_memory_bank, mdu_schedule
from .model import PreparedVideo, TempuraModel, prepare
from .ospu import classification_flips
from .rng import stream

log = logging.getLogger("tempura")

LOG_NAME = "train_log.jsonl"


class NumericFailure(NumericError):
    def __init__(self, epoch: int, step: int, video_id: int, losses: dict):
        super().__init__(f"non-finite loss at epoch {epoch} step {step} (video {video_id}): {losses}")
        self.epoch, self.step, self.video_id, self.losses = epoch, step, video_id, losses


def corpus_shape(videos: list[VideoAnnotation], header: dict | None = None) -> tuple[int, int, int]:
    """(object classes, predicate classes, feature dim), preferring the generator header."""
    gen = (header or {}).get("generator") or {}
    n_obj = n_pred = 0
    feat_dim = None
    for v in videos:
        for fr in v.frames:
            for o in fr.objects:
                n_obj = max(n_obj, o.det_class + 1, (o.gt_class if o.gt_class is not None else -1) + 1)
                feat_dim = o.feature.shape[0]
            for p in fr.pairs:
                n_pred = max(n_pred, max(p.labels, default=-1) + 1, max(p.observed, default=-1) + 1)
    n_obj = max(n_obj, int(gen.get("n_obj_classes", 0)))
    n_pred = max(n_pred, int(gen.get("n_pred_classes", 0)))
    if feat_dim is None:
        raise ConfigError("data", "corpus has no objects")
    return n_obj, n_pred, feat_dim


@dataclass
class TrainResult:
    model: TempuraModel
    history: list[dict]
    train_counts: np.ndarray
    checkpoints: list[Path] = field(default_factory=list)


def _meta(cfg: RunConfig, model: TempuraModel, epoch: int, train_counts) -> dict:
    return {"run": cfg.to_dict(), "model": model.cfg.to_dict(), "epoch": epoch,
            "train_counts": [int(c) for c in train_counts]}


def _fmt(x: float) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


def train(cfg: RunConfig, videos: list[VideoAnnotation], out_dir=None, header: dict | None = None,
          on_epoch=None) -> TrainResult:
    """Train for ``cfg.epochs``; writes checkpoints and the JSON-lines log when
    ``out_dir`` is given. Raises NumericFailure on a non-finite loss."""
    if not videos:
        raise ConfigError("data", "no training videos")
    n_obj, n_pred, feat_dim = corpus_shape(videos, header)
    model = TempuraModel(cfg.model_config(n_obj, n_pred, feat_dim))
    pvs: list[PreparedVideo] = [prepare(v) for v in videos]
    ids = [v.video_id for v in videos]
    train_counts = predicate_counts(videos, n_pred, observed=True)
    params = model.trainable()
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / LOG_NAME).write_text("", encoding="utf-8")

    history: list[dict] = []
    ckpts: list[Path] = []
    bank: MemoryBank | None = None
    best = math.inf
    stale = 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        use_bank = cfg.mdu and mdu_schedule(epoch) == "diffuse"
        if use_bank:
            bank = compute_memory_bank(model.embed_for_memory, pvs, n_pred, model.cfg.rel_dim, epoch)
        order = stream(cfg.seed, "order", epoch).permutation(len(pvs))
        eps_rng = stream(cfg.seed, "eps", epoch)
        sums: dict[str, float] = {}
        u_al, u_ep = [], []
        for i in order:
            pv = pvs[i]
            step += 1
            eps = model.draw_eps(eps_rng, len(pv.subj))
            try:
                res = model.forward(pv, training=True, bank=bank if use_bank else None, eps=eps)
                if not all(math.isfinite(v) for v in res.losses.values()):
                    raise NumericFailure(epoch, step, ids[i], res.losses)
                opt.zero_grad()
                backward(res.loss)
            except NumericError as exc:
                failure = exc
                if not isinstance(exc, NumericFailure):
                    failure = NumericFailure(epoch, step, ids[i], {"error": str(exc)})
                log.error("%s", failure)
                raise failure from (None if failure is exc else exc)
            for p in params:
                if p.grad is None:  # not reached this step (e.g. diffusion weights in epoch 1)
                    p.grad = np.zeros_like(p.data)
            opt.step()
            for k, v in res.losses.items():
                sums[k] = sums.get(k, 0.0) + v
            u_al.append(res.u_al)
            u_ep.append(res.u_ep)
        n = len(order)
        row = {"epoch": epoch, "lr": opt.lr, "steps": step, "mdu": "diffuse" if use_bank else "bypass"}
        row.update({f"loss_{k}": sums[k] / n for k in sorted(sums)})
        row["u_al"] = _fmt(float(np.mean(u_al))) if cfg.gmm_head else None
        row["u_ep"] = _fmt(float(np.mean(u_ep))) if cfg.gmm_head else None
        history.append(row)
        log.info("epoch %d  loss %.6f  lr %.3g", epoch, row["loss_total"], opt.lr)
        if out is not None:
            with open(out / LOG_NAME, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
            path = out / f"checkpoint_epoch{epoch:03d}.ckpt"
            save_checkpoint(path, model.state_dict(), _meta(cfg, model, epoch, train_counts))
            ckpts.append(path)
        if on_epoch is not None:
            on_epoch(epoch, model, row)
        # plateau: halve the lr after `patience` epochs without a real improvement
        if row["loss_total"] < best - cfg.plateau_delta:
            best = row["loss_total"]
            stale = 0
        else:
            stale += 1
            if stale >= cfg.plateau_patience:
                opt.lr *= cfg.plateau_factor
                stale = 0
    if out is not None:
        save_checkpoint(out / "checkpoint_final.ckpt", model.state_dict(),
                        _meta(cfg, model, cfg.epochs, train_counts))
    return TrainResult(model, history, train_counts, ckpts)


def load_model(path) -> tuple[TempuraModel, RunConfig, dict]:
    from .model import ModelConfig

    params, meta = load_checkpoint(path)
    if "model" not in meta or "run" not in meta:
        raise ConfigError("checkpoint", f"{path} carries no run/model metadata")
    run = RunConfig.from_dict(meta["run"])
    model = TempuraModel(ModelConfig(**meta["model"]))
    model.load_state_dict(params)
    return model, run, meta


def frame_outputs(pv: PreparedVideo, video: VideoAnnotation, task: str, pair_scores: np.ndarray,
                  obj_pred: np.ndarray, obj_scores: np.ndarray):
    """Per-frame (FramePairs, FrameGT) from one video's pair scores."""
    boxes = pv.det_boxes if task == "sgdet" else pv.gt_boxes
    out = []
    for t in range(pv.n_frames):
        sel = np.flatnonzero(pv.pair_frames == t)
        s, o = pv.subj[sel], pv.obj[sel]
        fid = f"{video.video_id}/{t}"
        pairs = metrics.FramePairs(
            frame_id=fid, subj_keys=s, obj_keys=o,
            subj_classes=np.asarray(obj_pred)[s], obj_classes=np.asarray(obj_pred)[o],
            pred_scores=pair_scores[sel], subj_scores=np.asarray(obj_scores)[s],
            obj_scores=np.asarray(obj_scores)[o], subj_boxes=boxes[s], obj_boxes=boxes[o])
        gs, go, gp = [], [], []
        for k in sel:
            for lab in pv.labels[k]:
                gs.append(pv.subj[k])
                go.append(pv.obj[k])
                gp.append(lab)
        gs_a, go_a = np.array(gs, dtype=np.int64), np.array(go, dtype=np.int64)
        gt = metrics.FrameGT(
            frame_id=fid, subj_keys=gs_a, obj_keys=go_a, subj_classes=pv.gt_classes[gs_a],
            obj_classes=pv.gt_classes[go_a], predicates=np.array(gp, dtype=np.int64),
            subj_boxes=pv.gt_boxes[gs_a].reshape(-1, 4), obj_boxes=pv.gt_boxes[go_a].reshape(-1, 4))
        out.append((pairs, gt))
    return out


@dataclass
class Predictions:
    pairs: list
    gts: list
    flips: int
    n_pred_classes: int


def predict(model: TempuraModel, videos: list[VideoAnnotation]) -> Predictions:
    """Inference (diffusion bypassed, scores from the mixture means)."""
    task = model.cfg.task
    pairs, gts = [], []
    flips = 0
    for video in videos:
        pv = prepare(video)
        with no_grad():
            res = model.forward(pv, training=False)
        flips += classification_flips(pv.track_ids, pv.frames, res.obj_pred)
        for fp, g in frame_outputs(pv, video, task, res.pair_scores, res.obj_pred, res.obj_scores):
            pairs.append(fp)
            gts.append(g)
    return Predictions(pairs, gts, flips, model.cfg.n_pred_classes)


def evaluate_model(model: TempuraModel, videos: list[VideoAnnotation], train_counts=None,
                   ks=metrics.DEFAULT_KS, pooling: str = "pooled", iou_threshold: float = 0.5,
                   thresholds=None) -> metrics.MetricReport:
    pred = predict(model, videos)
    report = metrics.evaluate(pred.pairs, pred.gts, pred.n_pred_classes, model.cfg.task, ks,
                              iou_threshold, pooling, train_counts, thresholds)
    report.extra["class_flips"] = pred.flips
    report.extra["frames"] = len(pred.gts)
    return report


def object_flips(model: TempuraModel, videos: list[VideoAnnotation]) -> int:
    """Cross-frame predicted-class changes along each ground-truth track."""
    total = 0
    for video in videos:
        pv = prepare(video)
        with no_grad():
            _, logits = model.classify_objects(pv, training=False)
        total += classification_flips(pv.track_ids, pv.frames, logits.data.argmax(axis=1))
    return total
