"""Head decoding, IoU, class-aware NMS, and COCO-style evaluation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Detection:
    box: tuple[float, float, float, float]
    class_id: int
    score: float

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        d = {"box": [float(v) for v in self.box], "class": int(self.class_id)}
        if names is not None:
            d["class_name"] = names[self.class_id]
        d["score"] = float(self.score)
        return d


def decode(heads: Sequence[np.ndarray], cfg, conf_thr: float = 0.25,
           index: int = 0) -> list[Detection]:
    """Turn raw head maps into boxes in input-image pixels.

    Each side distance is the expectation of a softmax over ``dfl_bins`` bins,
    measured from the cell center and scaled by the stride.
    """
    bins, nc = cfg.dfl_bins, cfg.num_classes
    h_img, w_img = cfg.input_size
    if len(heads) != len(cfg.strides):
        raise T.ShapeError(f"expected {len(cfg.strides)} head maps, got {len(heads)}",
                           dim="scales", expected=len(cfg.strides), got=len(heads))
    boxes, scores, classes = [], [], []
    proj = np.arange(bins, dtype=np.float64)
    for t, s in zip(heads, cfg.strides):
        expect = (4 * bins + nc, h_img // s, w_img // s)
        if t.ndim != 4 or t.shape[1:] != expect:
            raise T.ShapeError(f"head at stride {s} has shape {t.shape}, expected N x {expect}",
                               dim=f"stride{s}", expected=expect, got=t.shape)
        t = t[index].astype(np.float64)
        _, gh, gw = t.shape
        prob = T.softmax(t[:4 * bins].reshape(4, bins, gh, gw), axis=1)
        dist = np.tensordot(proj, prob, axes=([0], [1])) * s          # 4 x gh x gw
        cls = T.sigmoid(t[4 * bins:])
        ay, ax = np.meshgrid((np.arange(gh) + 0.5) * s, (np.arange(gw) + 0.5) * s, indexing="ij")
        b = np.stack([ax - dist[0], ay - dist[1], ax + dist[2], ay + dist[3]])
        boxes.append(b.reshape(4, -1).T)
        scores.append(cls.max(axis=0).ravel())
        classes.append(cls.argmax(axis=0).ravel())
    boxes = np.concatenate(boxes)
    scores = np.concatenate(scores)
    classes = np.concatenate(classes)
    keep = scores >= conf_thr
    boxes, scores, classes = boxes[keep], scores[keep], classes[keep]
    boxes[:, [0, 2]] = boxes[:, [0, 2]].clip(0, w_img)
    boxes[:, [1, 3]] = boxes[:, [1, 3]].clip(0, h_img)
    # zero-area boxes carry no location
    ok = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    return [Detection(tuple(float(v) for v in bx), int(c), float(sc))
            for bx, c, sc in zip(boxes[ok], classes[ok], scores[ok])]


def iou(a, b) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union) if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = iw.clip(0) * ih.clip(0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def _score_order(dets: Sequence[Detection]) -> list[int]:
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def nms(dets: Sequence[Detection], iou_thr: float = 0.45,
        max_det: int | None = None) -> list[Detection]:
    """Class-aware greedy suppression; a box is dropped when IoU with a kept box exceeds ``iou_thr``."""
    if not 0 < iou_thr < 1:
        raise ValueError("iou_thr must lie in (0, 1)")
    order = _score_order(dets)
    if not order:
        return []
    boxes = np.array([dets[i].box for i in order], dtype=np.float64)
    classes = np.array([dets[i].class_id for i in order])
    kept = []
    for c in np.unique(classes):
        idx = np.flatnonzero(classes == c)
        while idx.size:
            top = idx[0]
            kept.append(top)
            rest = idx[1:]
            if rest.size:
                rest = rest[iou_matrix(boxes[top], boxes[rest])[0] <= iou_thr]
            idx = rest
    kept.sort()  # positions in score order
    out = [dets[order[k]] for k in kept]
    return out[:max_det] if max_det is not None else out


# ------------------------------------------------------------------ evaluation

@dataclass
class GtImage:
    id: str
    file: str
    width: int
    height: int
    boxes: list[tuple[tuple[float, float, float, float], int]] = field(default_factory=list)


@dataclass
class GroundTruthSet:
    images: list[GtImage]
    classes: list[str]

    def __post_init__(self):
        ids = [im.id for im in self.images]
        if len(set(ids)) != len(ids):
            raise EvaluationError("image ids must be unique")
        for im in self.images:
            for box, c in im.boxes:
                if not (box[2] > box[0] and box[3] > box[1]):
                    raise EvaluationError(f"image {im.id}: degenerate box {box}")
                if not 0 <= c < len(self.classes):
                    raise EvaluationError(f"image {im.id}: class {c} out of range")

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthSet":
        images = []
        for im in d["images"]:
            boxes = [((b["x"], b["y"], b["x"] + b["w"], b["y"] + b["h"]), int(b["class"]))
                     for b in im.get("boxes", [])]
            images.append(GtImage(str(im["id"]), im.get("file", ""), int(im.get("width", 0)),
                                  int(im.get("height", 0)), boxes))
        return cls(images, list(d["classes"]))

    def to_dict(self) -> dict:
        return {
            "images": [{"id": im.id, "file": im.file, "width": im.width, "height": im.height,
                        "boxes": [{"x": b[0], "y": b[1], "w": b[2] - b[0], "h": b[3] - b[1],
                                   "class": c} for b, c in im.boxes]}
                       for im in self.images],
            "classes": list(self.classes),
        }


def load_annotations(path) -> GroundTruthSet:
    return GroundTruthSet.from_dict(json.loads(Path(path).read_text()))


@dataclass
class EvalResult:
    precision: float
    recall: float
    ap: dict[int, list[float]]          # class -> AP at each IoU threshold
    map50: float
    map50_95: float
    thresholds: tuple[float, ...] = IOU_THRESHOLDS

    def to_dict(self, names: Sequence[str] | None = None) -> dict:
        per_class = {}
        for c, aps in self.ap.items():
            key = names[c] if names is not None and c < len(names) else str(c)
            per_class[key] = {"ap50": aps[0], "ap50_95": float(np.mean(aps)), "ap": list(aps)}
        return {"precision": self.precision, "recall": self.recall, "map50": self.map50,
                "map50_95": self.map50_95, "iou_thresholds": list(self.thresholds),
                "per_class": per_class}


def average_precision(tp: np.ndarray, n_gt: int) -> float:
    """101-point interpolated AP from TP flags in descending score order."""
    if n_gt <= 0:
        raise EvaluationError("AP undefined without ground truth")
    if len(tp) == 0:
        return 0.0
    tp = np.asarray(tp, dtype=bool)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    rec = ctp / n_gt
    prec = ctp / (ctp + cfp)
    prec = np.maximum.accumulate(prec[::-1])[::-1]
    # i / 100 is correctly rounded, so a recall of exactly 3/10 reaches the 0.30 point
    rs = np.arange(101) / 100.0
    idx = np.searchsorted(rec, rs, side="left")
    q = np.where(idx < len(prec), prec[np.minimum(idx, len(prec) - 1)], 0.0)
    # exactly rounded sum so the result does not depend on summation order
    return math.fsum(q.tolist()) / 101


def greedy_match(dets, gts, t: float) -> np.ndarray:
    """TP flags for ``dets`` (already in score order) against ``gts`` of one image and class.

    Each detection takes the unmatched ground truth with the highest IoU >= t.
    """
    tp = np.zeros(len(dets), dtype=bool)
    if not len(gts) or not len(dets):
        return tp
    ious = iou_matrix(dets, gts)
    used = np.zeros(len(gts), dtype=bool)
    for k in range(len(dets)):
        cand = np.where(~used & (ious[k] >= t), ious[k], -1.0)
        j = int(cand.argmax())
        if cand[j] >= 0:
            used[j] = True
            tp[k] = True
    return tp


def evaluate(preds: dict[str, Sequence[Detection]], gt: GroundTruthSet, score_thr: float = 0.25,
             iou_thresholds: Sequence[float] = IOU_THRESHOLDS) -> EvalResult:
    known = {im.id for im in gt.images}
    unknown = set(preds) - known
    if unknown:
        raise EvaluationError(f"predictions for unknown image ids: {sorted(unknown)[:5]}")
    n_cls = len(gt.classes)
    gt_count = np.zeros(n_cls, dtype=int)
    for im in gt.images:
        for _, c in im.boxes:
            gt_count[c] += 1
    if gt_count.sum() == 0:
        raise EvaluationError("ground truth is empty for every class; mAP is undefined")

    ap: dict[int, list[float]] = {}
    tp_at_thr = 0
    n_pred_at_thr = 0
    for c in range(n_cls):
        # (score, image position, det position) keeps the sort stable and deterministic
        entries = []
        for pos, im in enumerate(gt.images):
            for k, d in enumerate(preds.get(im.id, ())):
                if d.class_id == c:
                    entries.append((-d.score, pos, k, d))
        entries.sort(key=lambda e: e[:3])
        scores = np.array([-e[0] for e in entries])
        per_t = []
        for ti, t in enumerate(iou_thresholds):
            tp = np.zeros(len(entries), dtype=bool)
            for pos, im in enumerate(gt.images):
                sel = [i for i, e in enumerate(entries) if e[1] == pos]
                if not sel:
                    continue
                g = [b for b, cc in im.boxes if cc == c]
                tp[sel] = greedy_match([entries[i][3].box for i in sel], g, t)
            if ti == 0:
                above = scores >= score_thr
                tp_at_thr += int(tp[above].sum())
                n_pred_at_thr += int(above.sum())
            if gt_count[c]:
                per_t.append(average_precision(tp, gt_count[c]))
        if gt_count[c]:
            ap[c] = per_t
    map50 = float(np.mean([v[0] for v in ap.values()]))
    map50_95 = float(np.mean([np.mean(v) for v in ap.values()]))
    precision = tp_at_thr / n_pred_at_thr if n_pred_at_thr else 0.0
    recall = tp_at_thr / int(gt_count.sum())
    return EvalResult(float(precision), float(recall), ap, map50, map50_95, tuple(iou_thresholds))


def detections_from_json(items: Sequence[dict]) -> list[Detection]:
    return [Detection(tuple(float(v) for v in d["box"]), int(d["class"]), float(d["score"]))
            for d in items]
