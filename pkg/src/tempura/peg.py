"""Predicate embedding generator: pair inputs, per-frame spatial encoder,
temporal windows, and the temporal decoder with learned window-position
codes on queries and keys.

All pairs of a video are processed in one pass. Frames (spatial) and
windows (temporal) are kept apart with block-diagonal attention masks,
which is equivalent to encoding each block separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import Encoder, EncoderLayer, MultiHeadConfig
from .autodiff import FFN, Linear, Module, ops
from .autodiff.nn import uniform_weight
from .autodiff.tensor import ContractError, Tensor


@dataclass
class PairInput:
    frame: int
    subject: int
    object: int
    vector: Tensor
    parts: dict[str, Tensor] = field(default_factory=dict)


@dataclass
class TemporalWindow:
    start: int
    frames: list[int]
    eta: int

    def __len__(self) -> int:
        return len(self.frames)


def build_windows(n_frames: int, eta: int, stride: int | None = None) -> list[TemporalWindow]:
    """Windows of ``eta`` frames every ``stride`` frames (default: eta, i.e.
    non-overlapping); a final short window picks up uncovered frames."""
    if eta < 1:
        raise ContractError(f"window length must be >= 1, got {eta}")
    stride = eta if stride is None else stride
    if not 1 <= stride <= eta:
        raise ContractError(f"window stride must lie in [1, {eta}], got {stride}")
    windows = []
    start = 0
    while start + eta <= n_frames:
        windows.append(TemporalWindow(start, list(range(start, start + eta)), eta))
        start += stride
    covered = windows[-1].frames[-1] + 1 if windows else 0
    if covered < n_frames:
        first = covered if windows else 0
        windows.append(TemporalWindow(first, list(range(first, n_frames)), eta))
    return windows


def block_mask(groups: np.ndarray) -> np.ndarray:
    """True where two slots belong to different groups (attention blocked)."""
    groups = np.asarray(groups)
    return groups[:, None] != groups[None, :]


class PEG(Module):
    def __init__(self, rng: np.random.Generator, feat_dim: int, n_obj_classes: int, d_v: int = 32,
                 d_u: int = 32, d_s: int = 16, heads: int = 8, spa_layers: int = 1, tem_layers: int = 1,
                 ffn_dim: int | None = None, eta: int = 2, stride: int | None = None):
        self.d_v, self.d_u, self.d_s = d_v, d_u, d_s
        self.dim = 2 * d_v + d_u + 2 * d_s
        self.eta, self.stride = eta, stride
        self.f_v = Linear(rng, feat_dim, d_v)
        self.f_u = Linear(rng, feat_dim, d_u)
        # 8 box coordinates (subject + object) -> union-feature space
        self.f_box = FFN(rng, 8, d_u, feat_dim)
        self.semantic = uniform_weight(rng, d_s, (n_obj_classes, d_s))
        cfg = MultiHeadConfig(self.dim, heads, ffn_dim or 2 * self.dim, spa_layers)
        self.spatial = Encoder(rng, cfg)
        self.temporal = [EncoderLayer(rng, cfg) for _ in range(tem_layers)]
        self.e_r = uniform_weight(rng, self.dim, (eta, self.dim))

    # -- pair representation -------------------------------------------------
    def pair_inputs(self, obj_feats: np.ndarray, obj_boxes: np.ndarray, obj_classes: np.ndarray,
                    subj: np.ndarray, obj: np.ndarray, unions: np.ndarray) -> tuple[Tensor, dict]:
        """Rows Concat(f_v(v_i), f_v(v_j), f_u(u_ij + f_box(b_i, b_j)), s_i, s_j)."""
        proj = ops.relu(self.f_v(Tensor(obj_feats)))
        vs = ops.getitem(proj, subj)
        vo = ops.getitem(proj, obj)
        boxes = np.concatenate([obj_boxes[subj], obj_boxes[obj]], axis=1)
        u = ops.relu(self.f_u(ops.add(Tensor(unions), self.f_box(Tensor(boxes)))))
        ss = ops.getitem(self.semantic, np.asarray(obj_classes)[subj])
        so = ops.getitem(self.semantic, np.asarray(obj_classes)[obj])
        parts = {"subject": vs, "object": vo, "union": u, "subject_sem": ss, "object_sem": so}
        return ops.concat([vs, vo, u, ss, so], axis=1), parts

    def spatial_encode(self, r: Tensor, frame_ids: np.ndarray) -> Tensor:
        return self.spatial(r, attn_mask=block_mask(frame_ids))

    def temporal_decode(self, z: Tensor, frame_ids: np.ndarray, n_frames: int) -> Tensor:
        frame_ids = np.asarray(frame_ids)
        windows = build_windows(n_frames, self.eta, self.stride)
        slot_pair, slot_win, slot_off = [], [], []
        owner = np.full(frame_ids.size, -1, dtype=np.int64)
        for w, win in enumerate(windows):
            for p in np.flatnonzero(np.isin(frame_ids, win.frames)):
                if owner[p] < 0:  # earliest window containing the frame supplies its output
                    owner[p] = len(slot_pair)
                slot_pair.append(p)
                slot_win.append(w)
                slot_off.append(frame_ids[p] - win.start)
        x = ops.getitem(z, np.asarray(slot_pair, dtype=np.int64))
        e = ops.getitem(self.e_r, np.asarray(slot_off, dtype=np.int64))
        mask = block_mask(np.asarray(slot_win))
        for layer in self.temporal:
            x = layer(x, attn_mask=mask, x_qk=ops.add(x, e))
        return ops.getitem(x, owner)

    def __call__(self, obj_feats, obj_boxes, obj_classes, subj, obj, unions, frame_ids, n_frames) -> Tensor:
        r, _ = self.pair_inputs(obj_feats, obj_boxes, obj_classes, subj, obj, unions)
        z = self.spatial_encode(r, frame_ids)
        return self.temporal_decode(z, frame_ids, n_frames)


def build_pair_input(peg: PEG, subject, obj, union_feature: np.ndarray, subject_class: int,
                     object_class: int) -> PairInput:
    """Single-pair form of :meth:`PEG.pair_inputs` for two detections."""
    if subject is obj:
        raise ContractError("subject and object must differ")
    if subject.frame != obj.frame:
        raise ContractError(f"cross-frame pair: frames {subject.frame} and {obj.frame}")
    feats = np.stack([subject.feature, obj.feature])
    boxes = np.asarray([subject.box, obj.box], dtype=np.float64)
    vec, parts = peg.pair_inputs(feats, boxes, np.array([subject_class, object_class]),
                                 np.array([0]), np.array([1]), np.asarray(union_feature)[None, :])
    return PairInput(subject.frame, 0, 1, ops.reshape(vec, (peg.dim,)),
                     {k: ops.reshape(v, (v.shape[-1],)) for k, v in parts.items()})
