"""Pure-Python/numpy versions of the compiled kernels (same arithmetic order)."""

from __future__ import annotations

import numpy as np


def adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    if weight_decay != 0.0:
        param *= 1.0 - lr * weight_decay
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (grad * grad) * (1.0 - beta2)
    denom = np.sqrt(v / bc2) + eps
    param -= (m / denom) * (lr / bc1)


def _iou(a, b) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = ix2 - ix1, iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def box_iou(a, b):
    out = np.zeros((len(a), len(b)))
    for i in range(len(a)):
        for j in range(len(b)):
            out[i, j] = _iou(a[i], b[j])
    return out


def match_ranked(cand, gt, cand_boxes, gt_boxes, use_iou, thr):
    cand, gt = np.asarray(cand).tolist(), np.asarray(gt).tolist()
    cb, gb = np.asarray(cand_boxes).tolist(), np.asarray(gt_boxes).tolist()
    rank = [-1] * len(gt)
    for r, c in enumerate(cand):
        for g, t in enumerate(gt):
            if rank[g] >= 0 or c[2] != t[2] or c[1] != t[1] or c[4] != t[4]:
                continue
            if use_iou:
                ok = _iou(cb[r][:4], gb[g][:4]) >= thr and _iou(cb[r][4:], gb[g][4:]) >= thr
            else:
                ok = c[0] == t[0] and c[3] == t[3]
            if ok:
                rank[g] = r
                break
    return np.asarray(rank, dtype=np.int64)
