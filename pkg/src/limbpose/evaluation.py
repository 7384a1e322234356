"""OKS similarity and COCO-style keypoint AP/AR.

Matching and precision interpolation follow the COCO keypoint protocol:
per-image greedy matching in descending score order, 101 recall points,
monotone precision envelope.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .keypoints import NUM_JOINTS, Dataset, InputError, PersonInstance

# per-joint constants k_i; COCO publishes sigma_i with k_i = 2 * sigma_i
COCO_SIGMAS = np.array([.26, .25, .25, .35, .35, .79, .79, .72, .72, .62, .62,
                        1.07, 1.07, .87, .87, .89, .89]) / 10.0
COCO_K = 2 * COCO_SIGMAS

DEFAULT_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
# k/100 exactly; linspace puts some points one ulp above the true level
RECALL_POINTS = np.arange(101) / 100
AREA_RANGES = {
    'all': (0.0, math.inf),
    'medium': (32.0 ** 2, 96.0 ** 2),
    'large': (96.0 ** 2, math.inf),
}
MAX_DETS = 20


@dataclass(frozen=True)
class PredictionInstance:
    image_id: int
    score: float
    keypoints: np.ndarray  # (17, 3): x, y, confidence

    def __post_init__(self):
        kps = np.asarray(self.keypoints, dtype=float).reshape(NUM_JOINTS, 3)
        object.__setattr__(self, 'keypoints', kps)
        if not math.isfinite(self.score):
            raise ValueError('prediction score must be finite')
        if not np.isfinite(kps[:, :2]).all():
            raise ValueError('prediction coordinates must be finite')

    @property
    def area(self) -> float:
        """Area of the box spanned by the predicted keypoints."""
        x, y = self.keypoints[:, 0], self.keypoints[:, 1]
        return float((x.max() - x.min()) * (y.max() - y.min()))

    def to_json(self) -> dict:
        return {'image_id': self.image_id, 'score': self.score,
                'keypoints': [float(v) for v in self.keypoints.ravel()]}


def parse_predictions(lines: Iterable[str]) -> List[PredictionInstance]:
    """Read JSON-lines predictions ``{image_id, score, keypoints: 51 numbers}``."""
    preds = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            preds.append(PredictionInstance(int(rec['image_id']), float(rec['score']),
                                            np.asarray(rec['keypoints'], dtype=float)))
        except (ValueError, KeyError, TypeError) as e:
            raise InputError(f'prediction line {n}: {e}') from None
    return preds


@dataclass
class EvalReport:
    ap: float
    ap50: float
    ap75: float
    ar: float
    ar50: float
    ar75: float
    ap_medium: Optional[float]
    ap_large: Optional[float]
    ap_by_tag: Dict[str, float] = field(default_factory=dict)
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS

    def to_json(self) -> dict:
        d = asdict(self)
        d['thresholds'] = [float(t) for t in self.thresholds]
        return d

    def csv_rows(self) -> List[tuple]:
        rows = [(k, getattr(self, k)) for k in
                ('ap', 'ap50', 'ap75', 'ar', 'ar50', 'ar75', 'ap_medium', 'ap_large')]
        rows += [(f'ap_tag_{t}', v) for t, v in sorted(self.ap_by_tag.items())]
        return rows


def oks(pred: PredictionInstance, gt: PersonInstance, k_constants=COCO_K) -> float:
    """Object keypoint similarity over the gt's labeled joints."""
    labeled = gt.labeled_mask
    if not labeled.any():
        raise ValueError(f'ground-truth instance {gt.id} has no labeled joints')
    return float(_oks_vector(pred.keypoints[:, :2], gt.xy, labeled, gt.area,
                             np.asarray(k_constants, dtype=float)))


def _oks_vector(pxy, gxy, labeled, area, k):
    d2 = np.sum((pxy[labeled] - gxy[labeled]) ** 2, axis=1)
    e = d2 / (2.0 * area * k[labeled] ** 2)
    return np.sum(np.exp(-e)) / labeled.sum()


def oks_matrix(preds: Sequence[PredictionInstance], gts: Sequence[PersonInstance],
               k_constants=COCO_K) -> np.ndarray:
    out = np.zeros((len(preds), len(gts)))
    for j, g in enumerate(gts):
        for i, p in enumerate(preds):
            out[i, j] = oks(p, g, k_constants)
    return out


def greedy_match(ious: np.ndarray, threshold: float, gt_ignore: np.ndarray):
    """Match score-sorted predictions (rows) to gts (columns), COCO style.

    Each prediction takes the unmatched gt with the highest similarity at or
    above ``threshold``; non-ignored gts are preferred over ignored ones.

    Returns:
        ``(pred_gt, gt_taken)``: the matched column per row (-1 if none) and a
        bool per column.
    """
    d, g = ious.shape
    order = np.argsort(gt_ignore, kind='stable')  # non-ignored gts first
    pred_gt = -np.ones(d, dtype=int)
    taken = np.zeros(g, dtype=bool)
    for i in range(d):
        best = min(threshold, 1 - 1e-10)
        m = -1
        for j in order:
            if taken[j]:
                continue
            if m > -1 and not gt_ignore[m] and gt_ignore[j]:
                break
            if ious[i, j] < best:
                continue
            best = ious[i, j]
            m = j
        if m > -1:
            pred_gt[i] = m
            taken[m] = True
    return pred_gt, taken


def interpolated_ap(tp: np.ndarray, fp: np.ndarray, num_gt: int) -> float:
    """Mean interpolated precision at 101 recall points.

    ``tp``/``fp`` are flags in descending-score order.
    """
    if num_gt == 0:
        return float('nan')
    tps = np.cumsum(tp, dtype=float)
    fps = np.cumsum(fp, dtype=float)
    rc = tps / num_gt
    pr = tps / np.maximum(tps + fps, np.spacing(1))
    pr = np.maximum.accumulate(pr[::-1])[::-1]
    idx = np.searchsorted(rc, RECALL_POINTS, side='left')
    q = np.zeros(len(RECALL_POINTS))
    reached = idx < len(pr)
    q[reached] = pr[idx[reached]]
    return float(np.mean(q))


def _accumulate(per_image, thresholds, area_rng):
    """AP and final recall per threshold for one area range."""
    lo, hi = area_rng
    T = len(thresholds)
    scores, tps, fps = [], [[] for _ in range(T)], [[] for _ in range(T)]
    num_gt = 0
    for preds, gts, ious in per_image:
        gt_ignore = np.array([not (lo <= g.area < hi) for g in gts], dtype=bool)
        num_gt += int((~gt_ignore).sum())
        pred_out = np.array([not (lo <= p.area < hi) for p in preds], dtype=bool)
        for t, thr in enumerate(thresholds):
            pred_gt, _ = greedy_match(ious, thr, gt_ignore)
            matched = pred_gt >= 0
            if len(gts):
                ignored = np.where(matched, gt_ignore[np.maximum(pred_gt, 0)], pred_out)
            else:
                ignored = pred_out
            tps[t].append(matched & ~ignored)
            fps[t].append(~matched & ~ignored)
        scores.append(np.array([p.score for p in preds]))
    if num_gt == 0:
        return None, None
    scores = np.concatenate(scores) if scores else np.zeros(0)
    order = np.argsort(-scores, kind='mergesort')
    ap = np.zeros(T)
    rec = np.zeros(T)
    for t in range(T):
        tp = np.concatenate(tps[t])[order] if tps[t] else np.zeros(0, bool)
        fp = np.concatenate(fps[t])[order] if fps[t] else np.zeros(0, bool)
        ap[t] = interpolated_ap(tp, fp, num_gt)
        rec[t] = tp.sum() / num_gt
    return ap, rec


def evaluate(preds: Sequence[PredictionInstance], gts: Dataset,
             thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
             k_constants=COCO_K, max_dets: int = MAX_DETS) -> EvalReport:
    """COCO-style keypoint AP/AR of ``preds`` against ``gts``.

    Ground truths without any labeled joint are skipped. Images carrying a
    ``difficulty`` tag additionally get a per-tag AP.

    Raises:
        InputError: a prediction names an image absent from ``gts``.
    """
    thresholds = tuple(float(t) for t in thresholds)
    if not thresholds or not all(0 < t <= 1 for t in thresholds):
        raise ValueError('thresholds must lie in (0, 1]')
    known = set(gts.image_ids)
    unknown = sorted({p.image_id for p in preds} - known)
    if unknown:
        raise InputError(f'predictions reference unknown image ids: {unknown}')

    by_image: Dict[int, List[PersonInstance]] = {i: [] for i in gts.image_ids}
    for p in preds:
        by_image[p.image_id].append(p)

    per_image = {}
    for image_id in gts.image_ids:
        ps = by_image[image_id]
        # stable sort keeps input order among equal scores
        ps = sorted(ps, key=lambda p: -p.score)[:max_dets]
        gs = [g for g in gts.instances_for(image_id) if not g.unlabeled]
        per_image[image_id] = (ps, gs, oks_matrix(ps, gs, k_constants))

    def summarize(image_ids, area='all'):
        return _accumulate([per_image[i] for i in image_ids], thresholds, AREA_RANGES[area])

    all_ids = gts.image_ids
    ap, rec = summarize(all_ids)
    if ap is None:
        raise InputError('ground truth contains no labeled instances')

    def at(values, thr):
        for t, v in zip(thresholds, values):
            if abs(t - thr) < 1e-9:
                return float(v)
        return float('nan')

    def mean_or_none(values):
        return None if values is None else float(np.mean(values))

    tags: Dict[str, List[int]] = {}
    for im in gts.images:
        if im.difficulty is not None:
            tags.setdefault(im.difficulty, []).append(im.id)
    ap_by_tag = {}
    for tag, ids in sorted(tags.items()):
        tag_ap, _ = summarize(ids)
        if tag_ap is not None:
            ap_by_tag[tag] = float(np.mean(tag_ap))

    return EvalReport(
        ap=float(np.mean(ap)), ap50=at(ap, 0.5), ap75=at(ap, 0.75),
        ar=float(np.mean(rec)), ar50=at(rec, 0.5), ar75=at(rec, 0.75),
        ap_medium=mean_or_none(summarize(all_ids, 'medium')[0]),
        ap_large=mean_or_none(summarize(all_ids, 'large')[0]),
        ap_by_tag=ap_by_tag, thresholds=thresholds,
    )


def perfect_predictions(gts: Dataset) -> List[PredictionInstance]:
    """Predictions equal to the labeled ground truth, score 1."""
    out = []
    for inst in gts.instances:
        if inst.unlabeled:
            continue
        kps = np.concatenate([inst.xy, np.ones((NUM_JOINTS, 1))], axis=1)
        kps[:, :2] = np.nan_to_num(kps[:, :2])
        out.append(PredictionInstance(inst.image_id, 1.0, kps))
    return out
