"""Full pipeline: object classification -> predicate embeddings ->
(training-only) memory diffusion -> predicate head.

Every submodule is constructed regardless of the ablation flags, in a fixed
order from one init stream, so toggling a component never changes the
initial weights of the others.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import gmm as gmm_mod
from .autodiff import Module, ops
from .autodiff.tensor import Tensor, no_grad
from .data import VideoAnnotation
from .memory import MemoryBank, MemoryDiffusion, memory_diffuse
from .ospu import (
    FrameClassifier,
    SequenceBatch,
    SequenceEncoderClassifier,
    build_sequences,
    intra_contrastive,
    matched_hidden,
    object_loss,
)
from .peg import PEG
from .rng import stream

TASKS = ("predcls", "sgcls", "sgdet")
TASK_LAMBDA = {"predcls": 0.5, "sgcls": 0.3, "sgdet": 0.5}
TASK_GMM_K = {"predcls": 6, "sgcls": 4, "sgdet": 4}


@dataclass
class ModelConfig:
    task: str = "predcls"
    n_obj_classes: int = 8
    n_pred_classes: int = 12
    feat_dim: int = 64
    d_v: int = 32
    d_u: int = 32
    d_s: int = 16
    heads: int = 8
    ffn_dim: int = 128
    spa_layers: int = 1
    tem_layers: int = 1
    eta: int = 2
    stride: int | None = None
    ospu_heads: int = 8
    ospu_layers: int = 1
    ospu_ffn: int = 128
    ospu_cls_hidden: int = 64
    gmm_k: int | None = None
    lam: float | None = None
    use_mdu: bool = True
    use_gmm: bool = True
    use_ospu: bool = True
    use_intra: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.gmm_k is None:
            self.gmm_k = TASK_GMM_K[self.task]
        if self.lam is None:
            self.lam = TASK_LAMBDA[self.task]

    @property
    def rel_dim(self) -> int:
        return 2 * self.d_v + self.d_u + 2 * self.d_s

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PreparedVideo:
    """Array views of one video, computed once and reused every epoch."""

    n_frames: int
    feats: np.ndarray
    gt_boxes: np.ndarray
    det_boxes: np.ndarray
    gt_classes: np.ndarray
    det_classes: np.ndarray
    frames: np.ndarray
    track_ids: np.ndarray
    subj: np.ndarray
    obj: np.ndarray
    unions: np.ndarray
    pair_frames: np.ndarray
    observed: list
    labels: list
    sequences: SequenceBatch
    frame_offsets: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def prepare(video: VideoAnnotation) -> PreparedVideo:
    objs = [o for fr in video.frames for o in fr.objects]
    offsets = np.cumsum([0] + [len(fr.objects) for fr in video.frames])
    subj, obj, unions, pframes, observed, labels = [], [], [], [], [], []
    for t, fr in enumerate(video.frames):
        for p in fr.pairs:
            subj.append(offsets[t] + p.subject)
            obj.append(offsets[t] + p.object)
            unions.append(p.union)
            pframes.append(t)
            observed.append(list(p.observed))
            labels.append(list(p.labels))
    feat_dim = objs[0].feature.shape[0]
    return PreparedVideo(
        n_frames=len(video.frames),
        feats=np.array([o.feature for o in objs]).reshape(len(objs), feat_dim),
        gt_boxes=np.array([o.box for o in objs], dtype=np.float64).reshape(len(objs), 4),
        det_boxes=np.array([o.det_box if o.det_box is not None else o.box for o in objs],
                           dtype=np.float64).reshape(len(objs), 4),
        gt_classes=np.array([o.gt_class if o.gt_class is not None else -1 for o in objs], dtype=np.int64),
        det_classes=np.array([o.det_class for o in objs], dtype=np.int64),
        frames=np.array([o.frame for o in objs], dtype=np.int64),
        track_ids=np.array([o.track_id for o in objs], dtype=np.int64),
        subj=np.array(subj, dtype=np.int64),
        obj=np.array(obj, dtype=np.int64),
        unions=np.array(unions).reshape(len(unions), feat_dim),
        pair_frames=np.array(pframes, dtype=np.int64),
        observed=observed,
        labels=labels,
        sequences=build_sequences(objs, feat_dim),
        frame_offsets=offsets,
    )


@dataclass
class VideoOutput:
    loss: Tensor | None
    losses: dict[str, float]
    pair_scores: np.ndarray
    obj_pred: np.ndarray
    obj_scores: np.ndarray
    r_tem: Tensor
    u_al: float = float("nan")
    u_ep: float = float("nan")
    eps: np.ndarray | None = None


class TempuraModel(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = stream(cfg.seed, "init")
        self.ospu = SequenceEncoderClassifier(rng, cfg.feat_dim, cfg.n_obj_classes, cfg.ospu_heads,
                                              cfg.ospu_layers, cfg.ospu_ffn, cfg.ospu_cls_hidden)
        hidden = matched_hidden(self.ospu.num_parameters(), cfg.feat_dim, cfg.n_obj_classes)
        self.frame_cls = FrameClassifier(rng, cfg.feat_dim, cfg.n_obj_classes, hidden)
        self.peg = PEG(rng, cfg.feat_dim, cfg.n_obj_classes, cfg.d_v, cfg.d_u, cfg.d_s, cfg.heads,
                       cfg.spa_layers, cfg.tem_layers, cfg.ffn_dim, cfg.eta, cfg.stride)
        self.mdu = MemoryDiffusion(rng, cfg.rel_dim, cfg.lam)
        self.gmm = gmm_mod.GMMHead(rng, cfg.rel_dim, cfg.n_pred_classes, cfg.gmm_k)
        self.plain = gmm_mod.PlainHead(rng, cfg.rel_dim, cfg.n_pred_classes)

    def trainable(self) -> list[Tensor]:
        """Parameters the optimizer updates under the current flags and task."""
        cfg = self.cfg
        params = list(self.peg.parameters())
        if cfg.task != "predcls":  # object classifier is frozen when GT classes are given
            params += (self.ospu if cfg.use_ospu else self.frame_cls).parameters()
        if cfg.use_mdu:
            params += self.mdu.parameters()
        params += (self.gmm if cfg.use_gmm else self.plain).parameters()
        return params

    def classify_objects(self, pv: PreparedVideo, training: bool):
        """(embeddings or None, logits) for every detection in flat order."""
        if self.cfg.use_ospu:
            return self.ospu(pv.sequences)
        return None, self.frame_cls(pv.feats)

    def draw_eps(self, rng: np.random.Generator, n_pairs: int) -> np.ndarray:
        return rng.standard_normal((n_pairs, self.cfg.n_pred_classes, self.cfg.gmm_k))

    def forward(self, pv: PreparedVideo, training: bool = True, bank: MemoryBank | None = None,
                eps: np.ndarray | None = None) -> VideoOutput:
        cfg = self.cfg
        losses: dict[str, float] = {}
        total = None

        # object classes feeding the semantic embeddings
        if cfg.task == "predcls":
            obj_pred = pv.gt_classes
            obj_scores = np.ones(obj_pred.size)
        else:
            emb, logits = self.classify_objects(pv, training)
            probs = ops.softmax(logits, axis=-1).data
            obj_pred = probs.argmax(axis=1)
            obj_scores = probs.max(axis=1)
            if training:
                l_o = object_loss(logits, pv.gt_classes)
                losses["object"] = l_o.item()
                total = l_o
                if cfg.use_ospu and cfg.use_intra:
                    l_intra = intra_contrastive(emb, pv.gt_classes)
                    losses["intra"] = l_intra.item()
                    total = ops.add(total, l_intra)

        boxes = pv.det_boxes if cfg.task == "sgdet" else pv.gt_boxes
        r_tem = self.peg(pv.feats, boxes, obj_pred, pv.subj, pv.obj, pv.unions, pv.pair_frames, pv.n_frames)
        z = r_tem
        if training and cfg.use_mdu and bank is not None:
            z = memory_diffuse(r_tem, bank, self.mdu)

        out_eps = None
        u_al = u_ep = float("nan")
        if cfg.use_gmm:
            g = self.gmm(z)
            u_al = float(gmm_mod.aleatoric(g.pi.data, g.sigma.data).data.mean())
            u_ep = float(gmm_mod.epistemic(g.pi.data, g.mu.data).data.mean())
            if training:
                out_eps = eps
                p_hat, _ = gmm_mod.train_scores(g, eps)
            else:
                p_hat = gmm_mod.infer_scores(g)
        else:
            p_hat = self.plain(z)

        if training:
            l_p = gmm_mod.predicate_loss(p_hat, gmm_mod.multi_hot(pv.observed, cfg.n_pred_classes))
            losses["predicate"] = l_p.item()
            total = l_p if total is None else ops.add(total, l_p)
            losses["total"] = total.item()
        return VideoOutput(total, losses, p_hat.data, np.asarray(obj_pred), np.asarray(obj_scores),
                           r_tem, u_al, u_ep, out_eps)

    def embed_for_memory(self, pv: PreparedVideo):
        with no_grad():
            out = self.forward(pv, training=False)
        return out.r_tem.data, pv.observed
