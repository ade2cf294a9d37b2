"""Object sequence processing: per-class sequences across frames, a
sequence encoder with fixed sinusoidal time codes, object classification
and the intra-video contrastive loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .attention import Encoder, MultiHeadConfig, sinusoidal_positions
from .autodiff import FFN, Module, ops
from .autodiff.tensor import ContractError, Tensor
from .data import DetectedObject, VideoAnnotation


@dataclass
class ObjectSequence:
    det_class: int
    frames: list[int]
    members: list[int]  # indices into the flat object list of the video


@dataclass
class SequenceBatch:
    sequences: list[ObjectSequence]
    features: np.ndarray   # [S, L, D], zero where padded
    valid: np.ndarray      # [S, L] bool
    positions: np.ndarray  # [S, L] frame index per slot, 0 where padded
    members: np.ndarray    # [S, L] flat object index, -1 where padded

    @property
    def n_objects(self) -> int:
        return int(self.valid.sum())


def build_sequences(objects: Sequence[DetectedObject], feat_dim: int | None = None) -> SequenceBatch:
    """One sequence per detected class, ordered by frame then confidence."""
    groups: dict[int, list[int]] = {}
    for i, obj in enumerate(objects):
        groups.setdefault(obj.det_class, []).append(i)
    seqs = []
    for cls in sorted(groups):
        idx = sorted(groups[cls], key=lambda i: (objects[i].frame, -objects[i].confidence, i))
        seqs.append(ObjectSequence(cls, [objects[i].frame for i in idx], idx))
    if feat_dim is None:
        feat_dim = objects[0].feature.shape[0] if objects else 0
    s = len(seqs)
    length = max((len(q.members) for q in seqs), default=0)
    feats = np.zeros((s, length, feat_dim))
    valid = np.zeros((s, length), dtype=bool)
    pos = np.zeros((s, length), dtype=np.int64)
    members = np.full((s, length), -1, dtype=np.int64)
    for r, q in enumerate(seqs):
        n = len(q.members)
        feats[r, :n] = [objects[i].feature for i in q.members]
        valid[r, :n] = True
        pos[r, :n] = q.frames
        members[r, :n] = q.members
    return SequenceBatch(seqs, feats, valid, pos, members)


def flat_objects(video: VideoAnnotation) -> list[DetectedObject]:
    return [obj for fr in video.frames for obj in fr.objects]


class SequenceEncoderClassifier(Module):
    """Sequence encoder followed by a 2-layer FFN object classifier."""

    def __init__(self, rng: np.random.Generator, feat_dim: int, n_classes: int, heads: int,
                 layers: int, ffn_dim: int, cls_hidden: int):
        self.feat_dim = feat_dim
        self.encoder = Encoder(rng, MultiHeadConfig(feat_dim, heads, ffn_dim, layers))
        self.classifier = FFN(rng, feat_dim, cls_hidden, n_classes)

    def encode(self, batch: SequenceBatch) -> Tensor:
        if batch.n_objects == 0:
            raise ContractError("sequence batch has no unpadded slots")
        pe = sinusoidal_positions(int(batch.positions.max()) + 1, self.feat_dim).values
        x = batch.features + np.where(batch.valid[..., None], pe[batch.positions], 0.0)
        return self.encoder(Tensor(x), key_padding_mask=~batch.valid)

    def __call__(self, batch: SequenceBatch) -> tuple[Tensor, Tensor]:
        """Embeddings and logits for unpadded slots, in flat object order."""
        out = self.encode(batch)
        s, length = batch.valid.shape
        flat = ops.reshape(out, (s * length, self.feat_dim))
        order = np.empty(batch.n_objects, dtype=np.int64)
        slots = np.flatnonzero(batch.valid.reshape(-1))
        order[batch.members.reshape(-1)[slots]] = slots
        emb = ops.getitem(flat, order)
        return emb, self.classifier(emb)


class FrameClassifier(Module):
    """Per-frame FFN baseline: classifies each detection from its own feature."""

    def __init__(self, rng: np.random.Generator, feat_dim: int, n_classes: int, hidden: int):
        self.classifier = FFN(rng, feat_dim, hidden, n_classes)

    def __call__(self, feats: np.ndarray) -> Tensor:
        return self.classifier(Tensor(feats))


def matched_hidden(budget: int, feat_dim: int, n_classes: int) -> int:
    """Hidden width giving a 2-layer FFN roughly ``budget`` parameters."""
    return max(1, int(round((budget - n_classes) / (feat_dim + n_classes + 1))))


def object_loss(logits: Tensor, gt_classes: np.ndarray) -> Tensor:
    return ops.cross_entropy(logits, gt_classes)


def intra_contrastive(emb: Tensor, labels: np.ndarray) -> Tensor:
    """Sum of squared distances over same-class pairs plus hinge
    max(0, 1 - d^2) over different-class pairs, each unordered pair once."""
    labels = np.asarray(labels)
    n = labels.size
    if n == 0:
        raise ContractError("intra_contrastive needs at least one embedding")
    diff = ops.sub(ops.reshape(emb, (n, 1, -1)), ops.reshape(emb, (1, n, -1)))
    d2 = ops.sum(ops.square(diff), axis=-1)
    upper = np.triu(np.ones((n, n), dtype=bool), k=1)
    same = labels[:, None] == labels[None, :]
    pos = ops.sum(ops.mul(d2, (upper & same).astype(np.float64)))
    hinge = ops.relu(ops.sub(1.0, d2))
    neg = ops.sum(ops.mul(hinge, (upper & ~same).astype(np.float64)))
    return ops.add(pos, neg)


def classification_flips(track_ids: Sequence[int], frames: Sequence[int], predicted: Sequence[int]) -> int:
    """Count frame-to-frame changes of the predicted class along each track."""
    by_track: dict[int, list[tuple[int, int]]] = {}
    for tid, t, c in zip(track_ids, frames, predicted):
        by_track.setdefault(int(tid), []).append((int(t), int(c)))
    flips = 0
    for seq in by_track.values():
        seq.sort()
        flips += sum(1 for (_, a), (_, b) in zip(seq, seq[1:]) if a != b)
    return flips
