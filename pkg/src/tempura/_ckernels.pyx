# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops. Semantics mirror ``_pykernels`` operation for operation."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def adamw_update(double[::1] param, double[::1] grad, double[::1] m, double[::1] v,
                 double lr, double beta1, double beta2, double eps, double weight_decay,
                 double bc1, double bc2):
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double decay = 1.0 - lr * weight_decay
    cdef double c1 = 1.0 - beta1
    cdef double c2 = 1.0 - beta2
    cdef double scale = lr / bc1
    cdef double g, denom
    cdef bint do_decay = weight_decay != 0.0
    for i in range(n):
        g = grad[i]
        if do_decay:
            param[i] = param[i] * decay
        m[i] = m[i] * beta1 + c1 * g
        v[i] = v[i] * beta2 + (g * g) * c2
        denom = sqrt(v[i] / bc2) + eps
        param[i] = param[i] - (m[i] / denom) * scale


cdef inline double _iou(double[:, ::1] a, Py_ssize_t i, Py_ssize_t ao,
                        double[:, ::1] b, Py_ssize_t j, Py_ssize_t bo) nogil:
    cdef double ix1 = a[i, ao] if a[i, ao] > b[j, bo] else b[j, bo]
    cdef double iy1 = a[i, ao + 1] if a[i, ao + 1] > b[j, bo + 1] else b[j, bo + 1]
    cdef double ix2 = a[i, ao + 2] if a[i, ao + 2] < b[j, bo + 2] else b[j, bo + 2]
    cdef double iy2 = a[i, ao + 3] if a[i, ao + 3] < b[j, bo + 3] else b[j, bo + 3]
    cdef double iw = ix2 - ix1
    cdef double ih = iy2 - iy1
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    cdef double inter = iw * ih
    cdef double area_a = (a[i, ao + 2] - a[i, ao]) * (a[i, ao + 3] - a[i, ao + 1])
    cdef double area_b = (b[j, bo + 2] - b[j, bo]) * (b[j, bo + 3] - b[j, bo + 1])
    cdef double union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def box_iou(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t i, j
    out = np.zeros((a.shape[0], b.shape[0]))
    cdef double[:, ::1] o = out
    for i in range(a.shape[0]):
        for j in range(b.shape[0]):
            o[i, j] = _iou(a, i, 0, b, j, 0)
    return out


def match_ranked(long long[:, ::1] cand, long long[:, ::1] gt, double[:, ::1] cand_boxes,
                 double[:, ::1] gt_boxes, bint use_iou, double thr):
    """For each GT triplet, the rank of the candidate that claims it (or -1).

    Candidates are visited in rank order; each claims the first unclaimed GT
    it matches. Rows are (subject key, subject class, predicate, object key,
    object class); boxes are subject xyxy followed by object xyxy.
    """
    cdef Py_ssize_t n = cand.shape[0], mg = gt.shape[0]
    cdef Py_ssize_t r, g
    out = np.full(mg, -1, dtype=np.int64)
    cdef long long[::1] rank = out
    cdef bint ok
    for r in range(n):
        for g in range(mg):
            if rank[g] >= 0:
                continue
            if cand[r, 2] != gt[g, 2] or cand[r, 1] != gt[g, 1] or cand[r, 4] != gt[g, 4]:
                continue
            if use_iou:
                ok = _iou(cand_boxes, r, 0, gt_boxes, g, 0) >= thr and _iou(cand_boxes, r, 4, gt_boxes, g, 4) >= thr
            else:
                ok = cand[r, 0] == gt[g, 0] and cand[r, 3] == gt[g, 3]
            if ok:
                rank[g] = r
                break
    return out
