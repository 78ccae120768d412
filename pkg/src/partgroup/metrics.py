"""Evaluation: part IoU, edge ODS/OIS, and region average precision."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import ValidationError
from .raster import (as_edge_grid, as_instance_grid, as_label_grid, as_prob_grid,
                     as_score_stack, check_same_shape)

AP_THRESHOLDS = tuple(round(0.1 * i, 1) for i in range(1, 10))
DEFAULT_EDGE_THRESHOLDS = tuple(round(0.01 * i, 2) for i in range(1, 100))
DEFAULT_MATCH_RADIUS_FRACTION = 0.0075


# --------------------------------------------------------------------------
# segmentation


def new_confusion(num_classes: int) -> np.ndarray:
    if num_classes < 2:
        raise ValidationError("confusion matrix needs at least two classes")
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def accumulate_confusion(pred, gt, acc: np.ndarray) -> np.ndarray:
    """Return ``acc`` plus the pixel counts of (gt class, predicted class)."""
    acc = np.asarray(acc)
    if acc.ndim != 2 or acc.shape[0] != acc.shape[1]:
        raise ValidationError("confusion matrix must be square")
    k = acc.shape[0]
    pred = as_label_grid(pred, k)
    gt = as_label_grid(gt, k)
    check_same_shape(pred, gt, what="prediction and ground truth")
    counts = np.bincount(gt.ravel().astype(np.int64) * k + pred.ravel(), minlength=k * k)
    return acc + counts.reshape(k, k)


def iou_from_confusion(acc) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where the union is empty) and their mean over defined classes."""
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[0] != acc.shape[1] or acc.size == 0:
        raise ValidationError("confusion matrix must be square and non-empty")
    if acc.sum() == 0:
        raise ValidationError("confusion matrix is empty")
    diag = np.diag(acc)
    union = acc.sum(axis=0) + acc.sum(axis=1) - diag
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, diag / union, np.nan)
    return iou, float(np.nanmean(iou))


# --------------------------------------------------------------------------
# edges


@dataclass(frozen=True)
class EdgeEvalConfig:
    match_radius_fraction: float = DEFAULT_MATCH_RADIUS_FRACTION
    thresholds: tuple[float, ...] = DEFAULT_EDGE_THRESHOLDS

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        if not self.match_radius_fraction > 0:
            raise ValidationError("match radius fraction must be positive")
        t = np.asarray(self.thresholds)
        if t.size == 0 or np.any(t <= 0) or np.any(t >= 1) or np.any(np.diff(t) <= 0):
            raise ValidationError("edge thresholds must be strictly increasing within (0, 1)")

    def radius(self, height: int, width: int) -> float:
        return self.match_radius_fraction * float(np.hypot(height, width))

    def to_dict(self) -> dict:
        return {"match_radius_fraction": self.match_radius_fraction,
                "thresholds": list(self.thresholds)}


@dataclass(frozen=True)
class EdgePR:
    """Per-threshold match counts for one image."""

    thresholds: np.ndarray
    matched_pred: np.ndarray
    total_pred: np.ndarray
    matched_gt: np.ndarray
    total_gt: np.ndarray


@lru_cache(maxsize=64)
def disk_offsets(radius: float):
    """Integer offsets within ``radius``, sorted by (squared distance, dy, dx)."""
    r = int(np.floor(radius))
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
    d2 = dy * dy + dx * dx
    keep = d2 <= radius * radius
    dy, dx, d2 = dy[keep], dx[keep], d2[keep]
    order = np.lexsort((dx, dy, d2))
    return (dy[order].astype(np.int64), dx[order].astype(np.int64),
            d2[order].astype(np.int64))


def match_edges(pred_mask, gt_mask, radius: float) -> int:
    """Size of the greedy nearest-first one-to-one matching within ``radius``."""
    pred_mask = as_edge_grid(pred_mask)
    gt_mask = as_edge_grid(gt_mask)
    check_same_shape(pred_mask, gt_mask, what="edge masks")
    if not pred_mask.any() or not gt_mask.any():
        return 0
    return int(kernels.greedy_match(pred_mask, gt_mask, *disk_offsets(float(radius))))


def edge_pr(pred_thinned, gt, cfg: EdgeEvalConfig = EdgeEvalConfig()) -> EdgePR:
    """Match counts at every threshold of ``cfg`` (prediction binarised at ``> t``)."""
    pred = as_prob_grid(pred_thinned)
    gt = as_edge_grid(gt)
    check_same_shape(pred, gt, what="edge prediction and ground truth")
    radius = cfg.radius(*pred.shape)
    thresholds = np.asarray(cfg.thresholds, dtype=np.float64)
    n = thresholds.size
    matched = np.zeros(n, dtype=np.int64)
    total_pred = np.zeros(n, dtype=np.int64)
    total_gt = np.full(n, int(gt.sum()), dtype=np.int64)
    values = pred[pred > 0]
    prev_count = -1
    prev_match = 0
    for i, t in enumerate(thresholds):
        t32 = np.float32(t)
        count = int((values > t32).sum())
        # the binarised set only shrinks with t, so equal size means equal set
        if count != prev_count:
            prev_match = match_edges(pred > t32, gt, radius) if count else 0
            prev_count = count
        matched[i] = prev_match
        total_pred[i] = count
    return EdgePR(thresholds, matched, total_pred, matched.copy(), total_gt)


def precision_recall(matched_pred, total_pred, matched_gt, total_gt):
    """Precision and recall arrays; an empty prediction (or ground truth) counts as 1."""
    mp = np.asarray(matched_pred, dtype=np.float64)
    tp = np.asarray(total_pred, dtype=np.float64)
    mg = np.asarray(matched_gt, dtype=np.float64)
    tg = np.asarray(total_gt, dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(tp > 0, mp / tp, 1.0)
        r = np.where(tg > 0, mg / tg, 1.0)
    return p, r


def f_measure(p, r):
    p = np.asarray(p, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    s = p + r
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0, 2.0 * p * r / s, 0.0)


def ods_ois(per_image: list[EdgePR]) -> tuple[float, float]:
    """Best dataset-wide F over thresholds (ODS) and mean per-image best F (OIS)."""
    per_image = list(per_image)
    if not per_image:
        raise ValidationError("ODS/OIS need at least one image")
    ref = per_image[0].thresholds
    for pr in per_image[1:]:
        if not np.array_equal(pr.thresholds, ref):
            raise ValidationError("all images must be evaluated on the same thresholds")
    sums = [np.sum([getattr(pr, f) for pr in per_image], axis=0)
            for f in ("matched_pred", "total_pred", "matched_gt", "total_gt")]
    ods = float(np.max(f_measure(*precision_recall(*sums))))
    best = [float(np.max(f_measure(*precision_recall(pr.matched_pred, pr.total_pred,
                                                        pr.matched_gt, pr.total_gt))))
            for pr in per_image]
    return ods, float(np.mean(best))


# --------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class ScoredInstance:
    image_id: str
    instance_id: int
    pixels: np.ndarray  # flat row-major indices
    score: float

    @property
    def area(self) -> int:
        return int(self.pixels.size)


def score_instances(result, part_scores=None, image_id: str = "0") -> list[ScoredInstance]:
    """Attach a confidence to each predicted instance.

    With a score stack the confidence is the mean over the instance of the
    per-pixel maximum class score; without one it is the instance's share of
    the image area. Output is sorted by descending score, then area, then id.
    """
    instances = as_instance_grid(getattr(result, "instances", result))
    flat = instances.ravel()
    n = int(flat.max()) if flat.size else 0
    if part_scores is not None:
        stack = as_score_stack(part_scores)
        check_same_shape(stack, instances, what="score stack and instances")
        pix_score = stack.max(axis=0).ravel().astype(np.float64)
        sums = np.bincount(flat, weights=pix_score, minlength=n + 1)
    order = np.argsort(flat, kind="stable")
    sorted_ids = flat[order]
    bounds = np.searchsorted(sorted_ids, np.arange(n + 2))
    out = []
    for iid in range(1, n + 1):
        pixels = order[bounds[iid]:bounds[iid + 1]]
        if pixels.size == 0:
            continue
        if part_scores is not None:
            score = float(sums[iid] / pixels.size)
        else:
            score = pixels.size / flat.size
        out.append(ScoredInstance(str(image_id), iid, np.sort(pixels), score))
    out.sort(key=lambda s: (-s.score, -s.area, s.instance_id))
    return out


@dataclass(frozen=True)
class APResult:
    thresholds: tuple[float, ...]
    ap: tuple[float, ...]
    n_pred: int
    n_gt: int

    @property
    def ap_vol(self) -> float:
        return float(np.mean(self.ap))

    def at(self, threshold: float) -> float:
        for t, v in zip(self.thresholds, self.ap):
            if abs(t - threshold) < 1e-9:
                return v
        raise KeyError(threshold)


def instance_ious(pred: ScoredInstance, gt_flat: np.ndarray, gt_area: np.ndarray) -> np.ndarray:
    """IoU of one predicted pixel set against every gt id (index 0 unused)."""
    inter = np.bincount(gt_flat[pred.pixels], minlength=gt_area.size)[:gt_area.size]
    union = pred.area + gt_area - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    iou[0] = 0.0
    return iou


def average_precision(is_tp, n_gt: int) -> float:
    """Area under the interpolated precision/recall curve."""
    is_tp = np.asarray(is_tp, dtype=bool)
    if n_gt == 0:
        return 1.0 if is_tp.size == 0 else 0.0
    if is_tp.size == 0:
        return 0.0
    tp = np.cumsum(is_tp)
    precision = tp / np.arange(1, is_tp.size + 1)
    recall = tp / n_gt
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate([[0.0], recall]))
    return float(np.sum(steps * envelope))


def ap_r(preds, gts: dict, thresholds=AP_THRESHOLDS) -> APResult:
    """Region AP at each IoU threshold and their mean (AP^r_vol).

    ``gts`` maps image id to its ground-truth instance grid. Predictions are
    ranked by descending score (ties: larger area, then image order, then
    instance id); each one claims the unmatched ground truth with the
    highest IoU in its image and counts as a true positive when that IoU
    reaches the threshold.
    """
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds or any(not 0.0 < t < 1.0 for t in thresholds):
        raise ValidationError("AP thresholds must be non-empty and inside (0, 1)")
    image_order = {k: i for i, k in enumerate(gts)}
    gt_flat = {}
    gt_area = {}
    for key, grid in gts.items():
        grid = as_instance_grid(grid)
        gt_flat[key] = grid.ravel()
        gt_area[key] = np.bincount(gt_flat[key]).astype(np.int64)
    n_gt = int(sum(int(np.count_nonzero(a[1:])) for a in gt_area.values()))

    preds = list(preds)
    for p in preds:
        if p.image_id not in image_order:
            raise ValidationError(f"prediction refers to unknown image {p.image_id!r}")
        if p.pixels.size == 0:
            raise ValidationError("predicted instance has no pixels")
        if not np.isfinite(p.score):
            raise ValidationError("instance score must be finite")
    preds.sort(key=lambda p: (-p.score, -p.area, image_order[p.image_id], p.instance_id))
    ious = [instance_ious(p, gt_flat[p.image_id], gt_area[p.image_id]) for p in preds]

    aps = []
    for t in thresholds:
        used = {k: np.zeros(a.size, dtype=bool) for k, a in gt_area.items()}
        is_tp = np.zeros(len(preds), dtype=bool)
        for i, (p, iou) in enumerate(zip(preds, ious)):
            cand = np.where(used[p.image_id], -1.0, iou)
            j = int(np.argmax(cand))
            if j > 0 and cand[j] >= t:
                used[p.image_id][j] = True
                is_tp[i] = True
        aps.append(average_precision(is_tp, n_gt))
    return APResult(thresholds, tuple(aps), len(preds), n_gt)


# --------------------------------------------------------------------------


@dataclass
class EvalReport:
    class_names: tuple[str, ...] = ()
    per_class_iou: tuple[float, ...] | None = None
    mean_iou: float | None = None
    ods: float | None = None
    ois: float | None = None
    ap: dict[float, float] | None = None
    ap_vol: float | None = None
    counts: dict[str, int] = field(default_factory=dict)

    def seg_dict(self):
        if self.mean_iou is None:
            return None
        names = self.class_names or tuple(str(i) for i in range(len(self.per_class_iou)))
        per_class = {n: (None if np.isnan(v) else float(v))
                     for n, v in zip(names, self.per_class_iou)}
        return {"mean_iou": self.mean_iou, "per_class_iou": per_class,
                "images": self.counts.get("seg_images", 0)}

    def edge_dict(self):
        if self.ods is None:
            return None
        return {"ods": self.ods, "ois": self.ois, "images": self.counts.get("edge_images", 0)}

    def inst_dict(self):
        if self.ap_vol is None:
            return None
        return {"ap": {f"{t:g}": v for t, v in self.ap.items()}, "ap_vol": self.ap_vol,
                "images": self.counts.get("inst_images", 0),
                "predicted_instances": self.counts.get("pred_instances", 0),
                "gt_instances": self.counts.get("gt_instances", 0)}
