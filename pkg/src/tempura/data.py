"""Synthetic long-tailed video scene graphs and their JSON Lines format.

Each video holds a fixed cast of persistent objects (object 0 plays the
"person" subject). Predicate labels per pair follow a Zipf law over class
rank, persist frame to frame, and are corrupted by missing-annotation and
label-flip noise to give the observed training labels. Object features are
class centroids plus an instance offset, a random-walk drift, per-frame
jitter and occasional blur bursts; blurred frames also make the simulated
detector more likely to report a wrong class.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .rng import stream

SCHEMA = "tempura.annotations"
SCHEMA_VERSION = 1


class GeneratorConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class AnnotationParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class GeneratorConfig:
    n_obj_classes: int = 8
    n_pred_classes: int = 12
    n_videos: int = 200
    n_frames: int = 6
    min_objects: int = 3
    max_objects: int = 5
    zipf_exponent: float = 1.5
    multi_label_rate: float = 0.3
    missing_rate: float = 0.1
    flip_rate: float = 0.0
    persistence: float = 0.8
    feat_dim: int = 64
    centroid_scale: float = 1.0
    instance_sigma: float = 0.5
    drift_sigma: float = 0.05
    jitter_sigma: float = 0.3
    blur_prob: float = 0.1
    blur_sigma: float = 2.5
    det_flip_rate: float = 0.03
    det_flip_blur: float = 0.3
    box_jitter: float = 0.03
    predicate_signal: float = 0.25
    union_noise: float = 1.0
    all_pairs: bool = False
    seed: int = 0

    def validate(self) -> None:
        for name in ("multi_label_rate", "missing_rate", "flip_rate", "persistence",
                     "blur_prob", "det_flip_rate", "det_flip_blur"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise GeneratorConfigError(name, f"rate must lie in [0, 1], got {val}")
        if self.zipf_exponent <= 0:
            raise GeneratorConfigError("zipf_exponent", f"must be > 0, got {self.zipf_exponent}")
        if self.n_frames < 1:
            raise GeneratorConfigError("n_frames", f"must be >= 1, got {self.n_frames}")
        if self.n_videos < 0:
            raise GeneratorConfigError("n_videos", f"must be >= 0, got {self.n_videos}")
        if not 2 <= self.min_objects <= self.max_objects:
            raise GeneratorConfigError("min_objects", "need 2 <= min_objects <= max_objects")
        if self.n_obj_classes < 2:
            raise GeneratorConfigError("n_obj_classes", "need at least 2 object classes")
        if self.n_pred_classes < 2:
            raise GeneratorConfigError("n_pred_classes", "need at least 2 predicate classes")
        if self.multi_label_rate > 0 and self.n_pred_classes < 2:
            raise GeneratorConfigError("multi_label_rate", "multi-label needs >= 2 predicate classes")
        for name in ("centroid_scale", "instance_sigma", "drift_sigma", "jitter_sigma", "blur_sigma",
                     "box_jitter", "predicate_signal", "union_noise"):
            if getattr(self, name) < 0:
                raise GeneratorConfigError(name, "must be >= 0")
        if self.feat_dim < 1:
            raise GeneratorConfigError("feat_dim", "must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, val in d.items():
            if key not in known:
                raise GeneratorConfigError(key, "unknown field")
            kwargs[key] = val
        return cls(**kwargs)


@dataclass(eq=False)
class DetectedObject:
    frame: int
    box: tuple[float, float, float, float]
    feature: np.ndarray
    det_class: int
    confidence: float
    gt_class: int | None = None
    track_id: int = -1
    det_box: tuple[float, float, float, float] | None = None

    def to_record(self) -> dict:
        return {"frame": self.frame, "box": [float(b) for b in self.box],
                "feature": [float(x) for x in self.feature], "det_class": self.det_class,
                "confidence": float(self.confidence), "gt_class": self.gt_class,
                "track_id": self.track_id,
                "det_box": None if self.det_box is None else [float(b) for b in self.det_box]}

    @classmethod
    def from_record(cls, r: dict) -> "DetectedObject":
        return cls(frame=int(r["frame"]), box=tuple(float(b) for b in r["box"]),
                   feature=np.asarray(r["feature"], dtype=np.float64),
                   det_class=int(r["det_class"]), confidence=float(r["confidence"]),
                   gt_class=None if r.get("gt_class") is None else int(r["gt_class"]),
                   track_id=int(r.get("track_id", -1)),
                   det_box=None if r.get("det_box") is None else tuple(float(b) for b in r["det_box"]))

    def __eq__(self, other):
        return isinstance(other, DetectedObject) and self.to_record() == other.to_record()


@dataclass(eq=False)
class PairAnnotation:
    subject: int
    object: int
    labels: list[int]
    observed: list[int]
    union: np.ndarray

    def to_record(self) -> dict:
        return {"subject": self.subject, "object": self.object, "labels": list(self.labels),
                "observed": list(self.observed), "union": [float(x) for x in self.union]}

    @classmethod
    def from_record(cls, r: dict) -> "PairAnnotation":
        return cls(subject=int(r["subject"]), object=int(r["object"]),
                   labels=[int(x) for x in r["labels"]], observed=[int(x) for x in r["observed"]],
                   union=np.asarray(r["union"], dtype=np.float64))

    def __eq__(self, other):
        return isinstance(other, PairAnnotation) and self.to_record() == other.to_record()


@dataclass(eq=False)
class Frame:
    objects: list[DetectedObject] = field(default_factory=list)
    pairs: list[PairAnnotation] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"objects": [o.to_record() for o in self.objects],
                "pairs": [p.to_record() for p in self.pairs]}

    def __eq__(self, other):
        return isinstance(other, Frame) and self.to_record() == other.to_record()


@dataclass(eq=False)
class VideoAnnotation:
    video_id: int
    frames: list[Frame]

    def to_record(self) -> dict:
        return {"video_id": self.video_id, "frames": [f.to_record() for f in self.frames]}

    @classmethod
    def from_record(cls, r: dict) -> "VideoAnnotation":
        frames = [Frame([DetectedObject.from_record(o) for o in f["objects"]],
                        [PairAnnotation.from_record(p) for p in f["pairs"]]) for f in r["frames"]]
        video = cls(video_id=int(r["video_id"]), frames=frames)
        video.check()
        return video

    def __eq__(self, other):
        return isinstance(other, VideoAnnotation) and self.to_record() == other.to_record()

    def check(self, n_pred_classes: int | None = None) -> None:
        for t, fr in enumerate(self.frames):
            n = len(fr.objects)
            for p in fr.pairs:
                if not (0 <= p.subject < n and 0 <= p.object < n) or p.subject == p.object:
                    raise ValueError(f"video {self.video_id} frame {t}: bad pair indices "
                                     f"({p.subject}, {p.object}) for {n} objects")
                if not p.labels:
                    raise ValueError(f"video {self.video_id} frame {t}: empty ground-truth label set")
                if n_pred_classes is not None and any(not 0 <= c < n_pred_classes
                                                      for c in p.labels + p.observed):
                    raise ValueError(f"video {self.video_id} frame {t}: predicate out of range")

    @property
    def n_frames(self) -> int:
        return len(self.frames)


def zipf_probs(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -exponent
    return w / w.sum()


@dataclass
class _World:
    centroids: np.ndarray
    signatures: np.ndarray
    displacement: np.ndarray


def _world(cfg: GeneratorConfig, seed: int) -> _World:
    rng = stream(seed, "world")
    return _World(
        centroids=rng.normal(0.0, cfg.centroid_scale, size=(cfg.n_obj_classes, cfg.feat_dim)),
        signatures=rng.normal(0.0, cfg.predicate_signal, size=(cfg.n_pred_classes, cfg.feat_dim)),
        displacement=rng.uniform(-0.25, 0.25, size=(cfg.n_pred_classes, 2)),
    )


def _sample_labels(rng, probs: np.ndarray, multi_rate: float) -> list[int]:
    first = int(rng.choice(probs.size, p=probs))
    labels = [first]
    if rng.random() < multi_rate:
        rest = probs.copy()
        rest[first] = 0.0
        labels.append(int(rng.choice(probs.size, p=rest / rest.sum())))
    return sorted(labels)


def _make_box(center, size) -> tuple[float, float, float, float]:
    cx, cy = np.clip(center, 0.0, 1.0)
    w, h = size
    x1, x2 = max(0.0, cx - w / 2), min(1.0, cx + w / 2)
    y1, y2 = max(0.0, cy - h / 2), min(1.0, cy + h / 2)
    return (float(x1), float(y1), float(max(x2, x1 + 1e-3)), float(max(y2, y1 + 1e-3)))


def _jitter_box(rng, box, sigma) -> tuple[float, float, float, float]:
    x1, y1, x2, y2 = np.asarray(box) + rng.normal(0.0, sigma, size=4)
    x1, x2 = sorted((float(np.clip(x1, 0, 1)), float(np.clip(x2, 0, 1))))
    y1, y2 = sorted((float(np.clip(y1, 0, 1)), float(np.clip(y2, 0, 1))))
    return (x1, y1, max(x2, x1 + 1e-3), max(y2, y1 + 1e-3))


def _observe(rng, labels: list[int], cfg: GeneratorConfig) -> list[int]:
    out: set[int] = set()
    for lab in labels:
        if rng.random() < cfg.missing_rate:
            continue
        if rng.random() < cfg.flip_rate:
            others = [c for c in range(cfg.n_pred_classes) if c != lab and c not in labels]
            if others:
                lab = int(others[rng.integers(len(others))])
        out.add(lab)
    return sorted(out)


def generate_video(cfg: GeneratorConfig, world: _World, seed: int, video_id: int) -> VideoAnnotation:
    rng = stream(seed, "video", video_id)
    probs = zipf_probs(cfg.n_pred_classes, cfg.zipf_exponent)
    n_obj = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    classes = [0] + [int(c) for c in rng.integers(1, cfg.n_obj_classes, size=n_obj - 1)]
    offsets = rng.normal(0.0, cfg.instance_sigma, size=(n_obj, cfg.feat_dim))
    drift = np.zeros((n_obj, cfg.feat_dim))
    sizes = rng.uniform(0.15, 0.4, size=(n_obj, 2))
    subj_center = rng.uniform(0.3, 0.7, size=2)
    if cfg.all_pairs:
        pair_idx = [(i, j) for i in range(n_obj) for j in range(n_obj) if i != j]
    else:
        pair_idx = [(0, j) for j in range(1, n_obj)]
    labels = [_sample_labels(rng, probs, cfg.multi_label_rate) for _ in pair_idx]
    centers = np.tile(subj_center, (n_obj, 1))

    frames = []
    for t in range(cfg.n_frames):
        if t > 0:
            drift += rng.normal(0.0, cfg.drift_sigma, size=drift.shape)
            subj_center = subj_center + rng.normal(0.0, 0.02, size=2)
            labels = [lab if rng.random() < cfg.persistence
                      else _sample_labels(rng, probs, cfg.multi_label_rate) for lab in labels]
        # object placement follows the primary predicate of the person pair
        centers[0] = subj_center
        for (i, j), lab in zip(pair_idx, labels):
            if i == 0:
                centers[j] = subj_center + world.displacement[lab[0]] + rng.normal(0.0, 0.02, size=2)
        objects = []
        feats = np.empty((n_obj, cfg.feat_dim))
        for k in range(n_obj):
            v = world.centroids[classes[k]] + offsets[k] + drift[k]
            v = v + rng.normal(0.0, cfg.jitter_sigma, size=cfg.feat_dim)
            blurred = rng.random() < cfg.blur_prob
            if blurred:
                v = v + rng.normal(0.0, cfg.blur_sigma, size=cfg.feat_dim)
            feats[k] = v
            flip = rng.random() < (cfg.det_flip_blur if blurred else cfg.det_flip_rate)
            det_class = classes[k]
            if flip:
                det_class = int((classes[k] + rng.integers(1, cfg.n_obj_classes)) % cfg.n_obj_classes)
            conf = float(np.clip(rng.normal(0.45 if (flip or blurred) else 0.8, 0.1), 0.0, 1.0))
            box = _make_box(centers[k], sizes[k])
            objects.append(DetectedObject(frame=t, box=box, feature=v, det_class=det_class,
                                          confidence=conf, gt_class=classes[k], track_id=k,
                                          det_box=_jitter_box(rng, box, cfg.box_jitter)))
        pairs = []
        for (i, j), lab in zip(pair_idx, labels):
            union = 0.5 * (feats[i] + feats[j]) + world.signatures[lab].sum(axis=0)
            union = union + rng.normal(0.0, cfg.union_noise, size=cfg.feat_dim)
            pairs.append(PairAnnotation(subject=i, object=j, labels=list(lab),
                                        observed=_observe(rng, lab, cfg), union=union))
        frames.append(Frame(objects, pairs))
    return VideoAnnotation(video_id=video_id, frames=frames)


def generate(cfg: GeneratorConfig, seed: int | None = None) -> list[VideoAnnotation]:
    """Deterministic corpus for (cfg, seed); seed defaults to ``cfg.seed``."""
    cfg.validate()
    seed = cfg.seed if seed is None else seed
    world = _world(cfg, seed)
    return [generate_video(cfg, world, seed, v) for v in range(cfg.n_videos)]


def predicate_counts(videos: Iterable[VideoAnnotation], n_classes: int, observed: bool = True) -> np.ndarray:
    counts = np.zeros(n_classes, dtype=np.int64)
    for video in videos:
        for fr in video.frames:
            for p in fr.pairs:
                for c in (p.observed if observed else p.labels):
                    counts[c] += 1
    return counts


def write_annotations(videos: Iterable[VideoAnnotation], path, generator: GeneratorConfig | None = None) -> None:
    header = {"schema": SCHEMA, "version": SCHEMA_VERSION,
              "generator": None if generator is None else dataclasses.asdict(generator)}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for video in videos:
            fh.write(json.dumps(video.to_record(), sort_keys=True, separators=(",", ":")) + "\n")


def read_annotations(path, with_header: bool = False):
    videos: list[VideoAnnotation] = []
    header = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationParseError(lineno, f"malformed JSON ({exc.msg})") from None
            if header is None:
                if record.get("schema") != SCHEMA:
                    raise AnnotationParseError(lineno, "missing or unknown schema header")
                if record.get("version") != SCHEMA_VERSION:
                    raise AnnotationParseError(lineno, f"unsupported version {record.get('version')}")
                header = record
                continue
            try:
                videos.append(VideoAnnotation.from_record(record))
            except (KeyError, TypeError, ValueError) as exc:
                raise AnnotationParseError(lineno, f"bad video record: {exc}") from None
    if header is None:
        raise AnnotationParseError(1, "empty file")
    return (videos, header) if with_header else videos


def split_corpus(videos: list[VideoAnnotation], n_test: int) -> tuple[list[VideoAnnotation], list[VideoAnnotation]]:
    return videos[:len(videos) - n_test], videos[len(videos) - n_test:]


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
