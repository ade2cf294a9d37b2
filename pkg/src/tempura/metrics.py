"""Scene-graph evaluation: triplet ranking, R@K, mR@K and HEAD/BODY/TAIL splits.

Ranking. A triplet's composite score is subject score * predicate score *
object score. Under "with" (With Constraint) each pair contributes only its
top predicate (ties to the lowest index); under "no" (No Constraints) every
(pair, predicate) is a candidate. Candidates sort by score descending, then
pair index, then predicate index.

Matching. Candidates are visited in rank order and each claims the first
unclaimed ground-truth triplet it matches. Because the process is sequential,
the state after K candidates does not depend on anything ranked later, so one
pass gives the hit rank of every GT triplet and R@K for every K follows.
PREDCLS and SGCLS match subject/object by identity (same detection key) and
class; SGDET matches by class and IoU >= threshold on both boxes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .autodiff.tensor import ContractError

REGIMES = ("with", "no")
DEFAULT_KS = (10, 20, 50)
PAPER_HEAD_MIN = 100000
PAPER_BODY_MIN = 8000
BUCKETS = ("HEAD", "BODY", "TAIL")


def _ints(x, n=None) -> np.ndarray:
    a = np.asarray(x, dtype=np.int64).reshape(-1)
    return a if n is None else a.reshape(n)


def _boxes(x, n: int) -> np.ndarray:
    if x is None:
        return np.zeros((n, 4))
    return np.asarray(x, dtype=np.float64).reshape(n, 4)


@dataclass
class FramePairs:
    """Model output for one frame: one row per candidate subject-object pair."""

    frame_id: str
    subj_keys: np.ndarray
    obj_keys: np.ndarray
    subj_classes: np.ndarray
    obj_classes: np.ndarray
    pred_scores: np.ndarray  # [P, C_r]
    subj_scores: np.ndarray | None = None
    obj_scores: np.ndarray | None = None
    subj_boxes: np.ndarray | None = None
    obj_boxes: np.ndarray | None = None

    @property
    def n_pairs(self) -> int:
        return len(self.subj_keys)


@dataclass
class SceneGraphPrediction:
    """Ranked candidate triplets for one frame (already ordered best first)."""

    frame_id: str
    subj_keys: np.ndarray
    subj_classes: np.ndarray
    subj_scores: np.ndarray
    subj_boxes: np.ndarray
    predicates: np.ndarray
    pred_scores: np.ndarray
    obj_keys: np.ndarray
    obj_classes: np.ndarray
    obj_scores: np.ndarray
    obj_boxes: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.scores)

    def head(self, k: int) -> "SceneGraphPrediction":
        return SceneGraphPrediction(self.frame_id, *(getattr(self, f)[:k] for f in _PRED_FIELDS))

    def to_record(self) -> dict:
        cands = []
        for i in range(len(self)):
            cands.append({
                "subject": {"key": int(self.subj_keys[i]), "box": [float(v) for v in self.subj_boxes[i]],
                            "class": int(self.subj_classes[i]), "score": float(self.subj_scores[i])},
                "predicate": {"class": int(self.predicates[i]), "score": float(self.pred_scores[i])},
                "object": {"key": int(self.obj_keys[i]), "box": [float(v) for v in self.obj_boxes[i]],
                           "class": int(self.obj_classes[i]), "score": float(self.obj_scores[i])},
                "score": float(self.scores[i]),
            })
        return {"frame": self.frame_id, "candidates": cands}

    @classmethod
    def from_record(cls, rec: dict) -> "SceneGraphPrediction":
        c = rec["candidates"]
        n = len(c)
        return cls(
            frame_id=str(rec["frame"]),
            subj_keys=_ints([x["subject"]["key"] for x in c]),
            subj_classes=_ints([x["subject"]["class"] for x in c]),
            subj_scores=np.array([x["subject"]["score"] for x in c], dtype=np.float64),
            subj_boxes=_boxes([x["subject"]["box"] for x in c], n),
            predicates=_ints([x["predicate"]["class"] for x in c]),
            pred_scores=np.array([x["predicate"]["score"] for x in c], dtype=np.float64),
            obj_keys=_ints([x["object"]["key"] for x in c]),
            obj_classes=_ints([x["object"]["class"] for x in c]),
            obj_scores=np.array([x["object"]["score"] for x in c], dtype=np.float64),
            obj_boxes=_boxes([x["object"]["box"] for x in c], n),
            scores=np.array([x["score"] for x in c], dtype=np.float64),
        )


_PRED_FIELDS = ("subj_keys", "subj_classes", "subj_scores", "subj_boxes", "predicates", "pred_scores",
                "obj_keys", "obj_classes", "obj_scores", "obj_boxes", "scores")


@dataclass
class FrameGT:
    """Ground-truth triplets of one frame."""

    frame_id: str
    subj_keys: np.ndarray
    obj_keys: np.ndarray
    subj_classes: np.ndarray
    obj_classes: np.ndarray
    predicates: np.ndarray
    subj_boxes: np.ndarray | None = None
    obj_boxes: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.predicates)


def rank_triplets(pairs: FramePairs, regime: str = "with") -> SceneGraphPrediction:
    if regime not in REGIMES:
        raise ContractError(f"regime must be one of {REGIMES}, got {regime!r}")
    p = pairs.n_pairs
    scores = np.asarray(pairs.pred_scores, dtype=np.float64)
    scores = scores.reshape(p, scores.shape[-1] if scores.ndim == 2 else -1) if p else scores.reshape(0, 0)
    c = scores.shape[1]
    s_sc = np.ones(p) if pairs.subj_scores is None else np.asarray(pairs.subj_scores, dtype=np.float64)
    o_sc = np.ones(p) if pairs.obj_scores is None else np.asarray(pairs.obj_scores, dtype=np.float64)
    if regime == "with":
        pair_idx = np.arange(p)
        pred_idx = scores.argmax(axis=1) if c else np.zeros(p, dtype=np.int64)
    else:
        pair_idx = np.repeat(np.arange(p), c)
        pred_idx = np.tile(np.arange(c), p)
    if p == 0 or c == 0:
        pair_idx = pred_idx = np.zeros(0, dtype=np.int64)
    ps = scores[pair_idx, pred_idx] if len(pair_idx) else np.zeros(0)
    comp = s_sc[pair_idx] * ps * o_sc[pair_idx]
    order = np.lexsort((pred_idx, pair_idx, -comp))
    pi, pr = pair_idx[order], pred_idx[order]
    sb, ob = _boxes(pairs.subj_boxes, p), _boxes(pairs.obj_boxes, p)
    return SceneGraphPrediction(
        frame_id=pairs.frame_id,
        subj_keys=_ints(pairs.subj_keys)[pi], subj_classes=_ints(pairs.subj_classes)[pi],
        subj_scores=s_sc[pi], subj_boxes=sb[pi],
        predicates=pr.astype(np.int64), pred_scores=ps[order],
        obj_keys=_ints(pairs.obj_keys)[pi], obj_classes=_ints(pairs.obj_classes)[pi],
        obj_scores=o_sc[pi], obj_boxes=ob[pi],
        scores=comp[order],
    )


def _check_mode(mode: str) -> bool:
    if mode not in ("predcls", "sgcls", "sgdet"):
        raise ContractError(f"task mode must be predcls, sgcls or sgdet, got {mode!r}")
    return mode == "sgdet"


def hit_ranks(pred: SceneGraphPrediction | None, gt: FrameGT, mode: str = "predcls",
              iou_threshold: float = 0.5) -> np.ndarray:
    """Rank of the candidate that claims each GT triplet, -1 when unmatched."""
    use_iou = _check_mode(mode)
    m = len(gt)
    if pred is None or len(pred) == 0 or m == 0:
        return np.full(m, -1, dtype=np.int64)
    cand = np.ascontiguousarray(np.stack([pred.subj_keys, pred.subj_classes, pred.predicates,
                                          pred.obj_keys, pred.obj_classes], axis=1), dtype=np.int64)
    g = np.ascontiguousarray(np.stack([gt.subj_keys, gt.subj_classes, gt.predicates,
                                       gt.obj_keys, gt.obj_classes], axis=1), dtype=np.int64)
    cb = np.ascontiguousarray(np.concatenate([pred.subj_boxes, pred.obj_boxes], axis=1), dtype=np.float64)
    gb = np.ascontiguousarray(np.concatenate([_boxes(gt.subj_boxes, m), _boxes(gt.obj_boxes, m)], axis=1),
                              dtype=np.float64)
    return np.asarray(kernels.match_ranked(cand, g, cb, gb, bool(use_iou), float(iou_threshold)))


def _align(predictions, gts):
    by_id = {p.frame_id: p for p in predictions}
    return [(by_id.get(g.frame_id), g) for g in gts]


def _all_hits(predictions, gts, mode, iou_threshold):
    return [(g, hit_ranks(p, g, mode, iou_threshold)) for p, g in _align(predictions, gts)]


def _check_k(k: int) -> None:
    if k <= 0:
        raise ContractError(f"K must be positive, got {k}")


def _recall_from_hits(hits, k: int) -> float:
    vals = [float(np.mean((r >= 0) & (r < k))) for g, r in hits if len(g)]
    if not vals:
        raise ContractError("no frame has ground-truth triplets")
    return float(np.mean(vals))


def _class_recall_from_hits(hits, k: int, n_classes: int, pooling: str):
    if pooling not in ("pooled", "per_frame"):
        raise ContractError(f"pooling must be 'pooled' or 'per_frame', got {pooling!r}")
    total = np.zeros(n_classes)
    matched = np.zeros(n_classes)
    frame_sum = np.zeros(n_classes)
    frame_n = np.zeros(n_classes)
    for g, r in hits:
        if not len(g):
            continue
        hit = ((r >= 0) & (r < k)).astype(np.float64)
        t = np.bincount(g.predicates, minlength=n_classes)[:n_classes].astype(np.float64)
        h = np.bincount(g.predicates, weights=hit, minlength=n_classes)[:n_classes]
        total += t
        matched += h
        present = t > 0
        frame_sum[present] += h[present] / t[present]
        frame_n[present] += 1
    if total.sum() == 0:
        raise ContractError("no ground-truth triplets")
    per_class = np.full(n_classes, np.nan)
    present = total > 0
    if pooling == "pooled":
        per_class[present] = matched[present] / total[present]
    else:
        per_class[present] = frame_sum[present] / frame_n[present]
    return float(np.mean(per_class[present])), per_class, total


def recall_at_k(predictions: list[SceneGraphPrediction], gts: list[FrameGT], k: int,
                mode: str = "predcls", iou_threshold: float = 0.5) -> float:
    """Image-based R@K: per-frame recall of the top-K, averaged over frames with GT."""
    _check_k(k)
    return _recall_from_hits(_all_hits(predictions, gts, mode, iou_threshold), k)


def mean_recall_at_k(predictions: list[SceneGraphPrediction], gts: list[FrameGT], k: int,
                     n_classes: int, mode: str = "predcls", iou_threshold: float = 0.5,
                     pooling: str = "pooled") -> tuple[float, np.ndarray]:
    """(mR@K, per-class recall). Classes absent from the GT get NaN."""
    _check_k(k)
    m, per_class, _ = _class_recall_from_hits(_all_hits(predictions, gts, mode, iou_threshold),
                                              k, n_classes, pooling)
    return m, per_class


def split_report(per_class_recall, counts, head_min: float = PAPER_HEAD_MIN,
                 body_min: float = PAPER_BODY_MIN) -> dict[str, float | None]:
    """Mean recall per frequency bucket; a bucket with no scored class is None.

    Classes with NaN recall (no test GT) are left out of their bucket's mean.
    """
    if not head_min > body_min > 0:
        raise ContractError(f"need head_min > body_min > 0, got {head_min}, {body_min}")
    rec = np.asarray(per_class_recall, dtype=np.float64)
    cnt = np.asarray(counts, dtype=np.float64)
    if rec.shape != cnt.shape:
        raise ContractError(f"recall and count vectors differ in shape: {rec.shape} vs {cnt.shape}")
    out: dict[str, float | None] = {}
    for name, sel in zip(BUCKETS, bucket_masks(cnt, head_min, body_min)):
        vals = rec[sel & ~np.isnan(rec)]
        out[name] = float(vals.mean()) if vals.size else None
    return out


def bucket_masks(counts, head_min: float, body_min: float):
    cnt = np.asarray(counts, dtype=np.float64)
    head = cnt >= head_min
    body = (cnt >= body_min) & ~head
    return head, body, ~(head | body)


def quantile_thresholds(counts, head_frac: float = 0.2, tail_frac: float = 0.3) -> tuple[float, float]:
    """(head_min, body_min) putting the top ``head_frac`` of classes in HEAD and
    the bottom ``tail_frac`` in TAIL. Ties at a cut move classes upward."""
    cnt = np.sort(np.asarray(counts, dtype=np.float64))[::-1]
    c = cnt.size
    if c < 3:
        raise ContractError("need at least 3 classes for a three-way split")
    n_head = max(1, int(round(head_frac * c)))
    n_tail = min(max(1, int(round(tail_frac * c))), c - n_head - 1)
    head_min = float(cnt[n_head - 1])
    body_min = max(float(cnt[c - n_tail - 1]), 0.5)
    if body_min >= head_min:  # everything tied at the top: one HEAD bucket
        body_min = head_min / 2 if head_min > 0 else 0.25
        head_min = max(head_min, 0.5)
    return head_min, body_min


@dataclass
class MetricReport:
    task: str
    pooling: str
    ks: tuple[int, ...]
    recall: dict[str, dict[str, float]]          # regime -> "K" -> R@K
    mean_recall: dict[str, dict[str, float]]     # regime -> "K" -> mR@K
    per_class_recall: dict[str, dict[str, list]]  # regime -> "K" -> per class (None = no GT)
    splits: dict[str, dict[str, dict]]            # regime -> "K" -> bucket -> mean or None
    gt_counts: list[int]
    train_counts: list[int]
    thresholds: tuple[float, float]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"task": self.task, "pooling": self.pooling, "ks": list(self.ks), "recall": self.recall,
                "mean_recall": self.mean_recall, "per_class_recall": self.per_class_recall,
                "splits": self.splits, "gt_counts": self.gt_counts, "train_counts": self.train_counts,
                "thresholds": list(self.thresholds), "extra": self.extra}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(d["task"], d["pooling"], tuple(d["ks"]), d["recall"], d["mean_recall"],
                   d["per_class_recall"], d["splits"], d["gt_counts"], d["train_counts"],
                   tuple(d["thresholds"]), d.get("extra", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def split(self, regime: str, k: int, bucket: str):
        return self.splits[regime][str(k)][bucket]


def evaluate(pairs: list[FramePairs], gts: list[FrameGT], n_classes: int, mode: str = "predcls",
             ks=DEFAULT_KS, iou_threshold: float = 0.5, pooling: str = "pooled",
             train_counts=None, thresholds: tuple[float, float] | None = None) -> MetricReport:
    """Rank under both regimes and score every K. Bucketing uses ``train_counts``
    (falling back to test GT counts) with quantile thresholds unless given."""
    for k in ks:
        _check_k(k)
    rec, mrec, pcr, spl = {}, {}, {}, {}
    gt_counts = np.zeros(n_classes, dtype=np.int64)
    for g in gts:
        gt_counts += np.bincount(g.predicates, minlength=n_classes)[:n_classes]
    tc = gt_counts if train_counts is None else np.asarray(train_counts, dtype=np.int64)
    th = thresholds if thresholds is not None else quantile_thresholds(tc)
    for regime in REGIMES:
        preds = [rank_triplets(p, regime) for p in pairs]
        hits = _all_hits(preds, gts, mode, iou_threshold)
        rec[regime], mrec[regime], pcr[regime], spl[regime] = {}, {}, {}, {}
        for k in ks:
            rec[regime][str(k)] = _recall_from_hits(hits, k)
            m, per_class, _ = _class_recall_from_hits(hits, k, n_classes, pooling)
            mrec[regime][str(k)] = m
            pcr[regime][str(k)] = [None if np.isnan(v) else float(v) for v in per_class]
            spl[regime][str(k)] = split_report(per_class, tc, *th)
    return MetricReport(mode, pooling, tuple(int(k) for k in ks), rec, mrec, pcr, spl,
                        [int(v) for v in gt_counts], [int(v) for v in tc], (float(th[0]), float(th[1])))


def write_predictions(preds: list[SceneGraphPrediction], path, max_candidates: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in preds:
            q = p if max_candidates is None else p.head(max_candidates)
            fh.write(json.dumps(q.to_record(), sort_keys=True) + "\n")


def read_predictions(path) -> list[SceneGraphPrediction]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(SceneGraphPrediction.from_record(json.loads(line)))
    return out


def write_report(report: MetricReport, path) -> None:
    Path(path).write_text(report.to_json() + "\n", encoding="utf-8")


def read_report(path) -> MetricReport:
    return MetricReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
