"""Slow reference implementations used to cross-check the vectorized paths.

Nothing in here calls into :mod:`daponet.tensor` or :mod:`daponet.detect`.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d_naive(x, w, b=None, stride=1, pad=0):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    y = np.zeros((n, o, ho, wo), dtype=np.float64)
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else float(b[oc])
                    for ci in range(c):
                        for di in range(kh):
                            for dj in range(kw):
                                r, s = i * stride + di - pad, j * stride + dj - pad
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += float(x[bi, ci, r, s]) * float(w[oc, ci, di, dj])
                    y[bi, oc, i, j] = acc
    return y


def conv1d_naive(x, w, groups=1, pad=0):
    n, c, length = x.shape
    o, cg, k = w.shape
    lo = length + 2 * pad - k + 1
    og = o // groups
    y = np.zeros((n, o, lo))
    for bi in range(n):
        for oc in range(o):
            g = oc // og
            for i in range(lo):
                acc = 0.0
                for ci in range(cg):
                    for t in range(k):
                        p = i + t - pad
                        if 0 <= p < length:
                            acc += float(x[bi, g * cg + ci, p]) * float(w[oc, ci, t])
                y[bi, oc, i] = acc
    return y


def pool2d_naive(x, kind, k, stride, pad=0):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    y = np.zeros((n, c, ho, wo))
    for bi in range(n):
        for ci in range(c):
            for i in range(ho):
                for j in range(wo):
                    vals = []
                    for di in range(k):
                        for dj in range(k):
                            r, s = i * stride + di - pad, j * stride + dj - pad
                            inside = 0 <= r < h and 0 <= s < w
                            if kind == "max":
                                if inside:
                                    vals.append(float(x[bi, ci, r, s]))
                            else:
                                vals.append(float(x[bi, ci, r, s]) if inside else 0.0)
                    y[bi, ci, i, j] = max(vals) if kind == "max" else sum(vals) / (k * k)
    return y


def box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def nms_bruteforce(dets, iou_thr):
    """O(n^2) greedy suppression over (box, class_id, score) triples; returns survivor indices."""
    order = sorted(range(len(dets)), key=lambda i: -dets[i][2])
    alive = {i: True for i in order}
    for a_pos, a in enumerate(order):
        if not alive[a]:
            continue
        for b in order[a_pos + 1:]:
            if alive[b] and dets[a][1] == dets[b][1] and box_iou(dets[a][0], dets[b][0]) > iou_thr:
                alive[b] = False
    return [i for i in order if alive[i]]


def _lexmax_assignment(ious, t):
    """Enumerate every injective det->gt assignment (IoU >= t) and keep the one whose
    per-detection IoU vector, in score order, is lexicographically largest."""
    n_det, n_gt = len(ious), len(ious[0]) if ious else 0
    best = None

    def rec(k, used, vec, assign):
        nonlocal best
        if k == n_det:
            key = tuple(vec)
            if best is None or key > best[0]:
                best = (key, list(assign))
            return
        rec(k + 1, used, vec + [-1.0], assign + [None])
        for j in range(n_gt):
            if not used & (1 << j) and ious[k][j] >= t:
                rec(k + 1, used | (1 << j), vec + [ious[k][j]], assign + [j])

    rec(0, 0, [], [])
    return best[1] if best else []


def ap101_loop(tp_flags, n_gt):
    precisions, recalls = [], []
    tp = fp = 0
    for f in tp_flags:
        tp += f
        fp += not f
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    points = []
    for r_i in range(101):
        r = r_i / 100
        best = 0.0
        for p, rc in zip(precisions, recalls):
            if rc >= r and p > best:
                best = p
        points.append(best)
    return math.fsum(points) / 101


def exhaustive_eval(preds, gts, n_classes, thresholds):
    """mAP by exhaustive matching.

    ``preds``: {image: [(box, cls, score)]}; ``gts``: {image: [(box, cls)]}; image order is the
    dict order. Returns {cls: [AP per threshold]} for classes with ground truth.
    """
    out = {}
    images = list(gts)
    for c in range(n_classes):
        n_gt = sum(1 for im in images for _, cc in gts[im] if cc == c)
        if n_gt == 0:
            continue
        entries = [(-d[2], pi, k, im, d[0]) for pi, im in enumerate(images)
                   for k, d in enumerate(preds.get(im, [])) if d[1] == c]
        entries.sort(key=lambda e: e[:3])
        aps = []
        for t in thresholds:
            flags = [False] * len(entries)
            for im in images:
                idx = [i for i, e in enumerate(entries) if e[3] == im]
                g = [b for b, cc in gts[im] if cc == c]
                if not idx or not g:
                    continue
                ious = [[box_iou(entries[i][4], gb) for gb in g] for i in idx]
                assign = _lexmax_assignment(ious, t)
                for pos, i in enumerate(idx):
                    flags[i] = assign[pos] is not None
            aps.append(ap101_loop(flags, n_gt))
        out[c] = aps
    return out


def softmax2_closed_form(a: float, b: float) -> tuple[float, float]:
    """Two-element softmax written as a logistic of the difference."""
    p = 1.0 / (1.0 + math.exp(b - a))
    return p, 1.0 - p
