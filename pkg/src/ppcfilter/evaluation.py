"""KITTI-style detection evaluation at 40 recall positions.

Oriented IoU in bird's-eye view and 3D, greedy score-ordered matching,
right-interpolated precision on the recall grid ``k/40``, AP, the precision
at the highest reachable recall position (HR-Precision), and false/true
positive totals summed over the recall positions.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boxes import bev_corners
from .errors import InvalidComparisonError, UndefinedRecallError
from .kitti_io import DIFFICULTY_RULES, Difficulty

NUM_RECALL_POSITIONS = 40
DEFAULT_IOU_THRESHOLD = 0.7
METRICS = ("3d", "bev")

TP, FP, IGNORED = 1, 0, -1


def polygon_area(poly):
    """Signed shoelace area (positive for counter-clockwise vertices)."""
    if len(poly) < 3:
        return 0.0
    s = 0.0
    for i in range(len(poly)):
        x0, y0 = poly[i - 1]
        x1, y1 = poly[i]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def clip_convex(subject, clip):
    """Intersection of two counter-clockwise convex polygons (Sutherland-Hodgman)."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i - 1]
        bx, by = clip[i]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp, out = out, []
        prev = inp[-1]
        s_prev = side(prev)
        for cur in inp:
            s_cur = side(cur)
            if s_cur >= 0.0:
                if s_prev < 0.0:
                    out.append(_cross_point(prev, cur, s_prev, s_cur))
                out.append(cur)
            elif s_prev >= 0.0:
                out.append(_cross_point(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return out


def _cross_point(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _footprints_may_touch(a, b):
    dx = a.center[0] - b.center[0]
    dy = a.center[1] - b.center[1]
    reach = 0.5 * (math.hypot(a.w, a.l) + math.hypot(b.w, b.l))
    return dx * dx + dy * dy <= reach * reach


def bev_intersection(a, b):
    if not _footprints_may_touch(a, b):
        return 0.0
    poly = clip_convex(bev_corners(a).tolist(), bev_corners(b).tolist())
    return max(polygon_area(poly), 0.0)


def iou_bev(a, b):
    """Bird's-eye-view IoU of two yaw-rotated boxes."""
    inter = bev_intersection(a, b)
    if inter <= 0.0:
        return 0.0
    union = a.w * a.l + b.w * b.l - inter
    return min(inter / union, 1.0)


def iou_3d(a, b):
    """Volumetric IoU: footprint overlap times vertical overlap."""
    za0, za1 = a.center[2] - a.h / 2, a.center[2] + a.h / 2
    zb0, zb1 = b.center[2] - b.h / 2, b.center[2] + b.h / 2
    dz = min(za1, zb1) - max(za0, zb0)
    if dz <= 0.0:
        return 0.0
    inter = bev_intersection(a, b) * dz
    if inter <= 0.0:
        return 0.0
    union = a.volume() + b.volume() - inter
    return min(inter / union, 1.0)


IOU_FUNCS = {"3d": iou_3d, "bev": iou_bev}


@dataclass
class GroundTruth:
    box: object
    difficulty: Difficulty = Difficulty.EASY
    obj_type: str = "Car"
    bbox: Optional[tuple] = None


def _bbox_overlap_frac(det_bbox, region):
    """Fraction of ``det_bbox`` covered by ``region`` (image-plane boxes)."""
    iw = min(det_bbox[2], region[2]) - max(det_bbox[0], region[0])
    ih = min(det_bbox[3], region[3]) - max(det_bbox[1], region[1])
    area = (det_bbox[2] - det_bbox[0]) * (det_bbox[3] - det_bbox[1])
    if iw <= 0 or ih <= 0 or area <= 0:
        return 0.0
    return iw * ih / area


def match_frame(preds, gts, difficulty=Difficulty.MODERATE, metric="3d",
                threshold=DEFAULT_IOU_THRESHOLD, obj_class="Car"):
    """Greedy matching of one frame's predictions against its ground truths.

    Predictions are visited by descending score.  Each takes the unmatched
    ground truth of the evaluated difficulty with the highest IoU, if that IoU
    reaches ``threshold``.  Predictions explained only by ignored ground
    truths (other difficulties, vans, DontCare regions) or too small in the
    image count as neither TP nor FP.

    Returns ``(flags, scores, n_valid_gt)`` with flags in {TP, FP, IGNORED}
    aligned with ``preds``.
    """
    iou = IOU_FUNCS[metric]
    level = Difficulty(difficulty)
    min_height = DIFFICULTY_RULES[level][0]
    valid, soft, regions = [], [], []
    for g in gts:
        if g.obj_type == "DontCare":
            if g.bbox is not None:
                regions.append(g.bbox)
        elif g.obj_type == obj_class and g.difficulty <= level:
            valid.append(g)
        elif g.obj_type == obj_class or (obj_class == "Car" and g.obj_type == "Van"):
            soft.append(g)
    flags = np.full(len(preds), IGNORED, dtype=int)
    scores = np.array([p.score for p in preds], dtype=float)
    matched = [False] * len(valid)
    order = sorted((i for i, p in enumerate(preds) if p.label == obj_class),
                   key=lambda i: (-preds[i].score, i))
    for i in order:
        box = preds[i].box
        best, best_iou = -1, threshold
        for k, g in enumerate(valid):
            if matched[k]:
                continue
            v = iou(box, g.box)
            if v >= best_iou:
                if v > best_iou or best < 0:
                    best, best_iou = k, v
        if best >= 0:
            matched[best] = True
            flags[i] = TP
            continue
        if any(iou(box, g.box) >= threshold for g in soft):
            continue
        bbox = preds[i].bbox
        if bbox is not None:
            if any(_bbox_overlap_frac(bbox, r) > 0.5 for r in regions):
                continue
            if bbox[3] - bbox[1] < min_height:
                continue
        flags[i] = FP
    return flags, scores, len(valid)


@dataclass
class PrCurve:
    recall: np.ndarray  # the 40 sample positions k/40
    precision: np.ndarray  # interpolated; NaN where unreachable
    tp: np.ndarray  # TP count at the first cut reaching each position
    fp: np.ndarray
    max_recall: float
    n_gt: int

    @property
    def reachable(self):
        return ~np.isnan(self.precision)


def _cut_points(scores, flags):
    keep = flags != IGNORED
    s = scores[keep]
    f = flags[keep]
    order = np.argsort(-s, kind="stable")
    s, f = s[order], f[order]
    ctp = np.cumsum(f == TP)
    cfp = np.cumsum(f == FP)
    # a cut keeps every prediction with score >= threshold; ties go together
    last_of_group = np.append(s[1:] != s[:-1], True) if len(s) else np.zeros(0, bool)
    return ctp[last_of_group], cfp[last_of_group]


def pr_and_ap(scores, flags, n_gt, num_positions=NUM_RECALL_POSITIONS):
    """Precision/recall curve on the ``k/num_positions`` grid and AP in percent."""
    if n_gt < 1:
        raise UndefinedRecallError("recall is undefined without ground truths")
    scores = np.asarray(scores, dtype=float)
    flags = np.asarray(flags, dtype=int)
    ctp, cfp = _cut_points(scores, flags)
    rec = ctp / n_gt
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(ctp + cfp > 0, ctp / np.maximum(ctp + cfp, 1), 0.0)
    positions = np.arange(1, num_positions + 1) / num_positions
    interp = np.full(num_positions, np.nan)
    tp = np.zeros(num_positions, dtype=int)
    fp = np.zeros(num_positions, dtype=int)
    for k, r in enumerate(positions):
        ok = np.flatnonzero(rec >= r - 1e-12)
        if len(ok):
            interp[k] = prec[ok].max()
            tp[k], fp[k] = ctp[ok[0]], cfp[ok[0]]
    curve = PrCurve(positions, interp, tp, fp, float(rec.max()) if len(rec) else 0.0, int(n_gt))
    ap = 100.0 * float(np.nan_to_num(interp, nan=0.0).mean())
    return curve, ap


def hr_precision(curve):
    """Interpolated precision (percent) at the highest reachable recall position.

    Returns ``(precision_percent, recall_position)``.
    """
    reach = np.flatnonzero(curve.reachable)
    if not len(reach):
        raise UndefinedRecallError("no recall position is reachable")
    k = reach[-1]
    return 100.0 * float(curve.precision[k]), float(curve.recall[k])


@dataclass
class EvalReport:
    metric: str
    difficulty: Difficulty
    ap: float
    hr_precision: float  # NaN when no recall position is reached
    hr_recall: float
    curve: PrCurve
    frame_ids: tuple = field(default=())
    iou_threshold: float = DEFAULT_IOU_THRESHOLD

    @property
    def tp_sum(self):
        return int(self.curve.tp.sum())

    @property
    def fp_sum(self):
        return int(self.curve.fp.sum())


def evaluate(preds_by_frame, gts_by_frame, difficulty=Difficulty.MODERATE, metric="3d",
             threshold=DEFAULT_IOU_THRESHOLD):
    """Evaluate detections over a set of frames.

    Both arguments map frame id to a list (``Detection`` / ``GroundTruth``);
    frames missing from ``preds_by_frame`` have no detections.
    """
    all_scores, all_flags = [], []
    n_gt = 0
    ids = tuple(sorted(gts_by_frame))
    for fid in ids:
        flags, scores, n = match_frame(preds_by_frame.get(fid, []), gts_by_frame[fid],
                                       difficulty, metric, threshold)
        all_scores.append(scores)
        all_flags.append(flags)
        n_gt += n
    if n_gt == 0:
        raise UndefinedRecallError(f"no ground truths at difficulty {Difficulty(difficulty).name.lower()}")
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    flags = np.concatenate(all_flags) if all_flags else np.zeros(0, dtype=int)
    curve, ap = pr_and_ap(scores, flags, n_gt)
    try:
        hrp, hrr = hr_precision(curve)
    except UndefinedRecallError:
        hrp, hrr = float("nan"), 0.0
    return EvalReport(metric, Difficulty(difficulty), ap, hrp, hrr, curve, ids, threshold)


def pct_change(before, after):
    if before == 0:
        return 0.0 if after == 0 else float("inf")
    return 100.0 * (after - before) / before


def fp_tp_sums(before, after):
    """FP/TP totals over the recall positions and their percent change."""
    if before.frame_ids != after.frame_ids:
        raise InvalidComparisonError("reports cover different frame sets")
    if (before.metric, before.difficulty, before.curve.n_gt) != (after.metric, after.difficulty, after.curve.n_gt):
        raise InvalidComparisonError("reports differ in metric, difficulty or ground truths")
    return {
        "fp_before": before.fp_sum,
        "fp_after": after.fp_sum,
        "fp_change_pct": pct_change(before.fp_sum, after.fp_sum),
        "tp_before": before.tp_sum,
        "tp_after": after.tp_sum,
        "tp_change_pct": pct_change(before.tp_sum, after.tp_sum),
    }


def _fmt(v, digits=2):
    return "n/a" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{digits}f}"


def format_reports(rows):
    """Aligned plain-text table; ``rows`` are ``(name, EvalReport)`` pairs."""
    header = ["run", "metric", "difficulty", "AP", "HR-Prec", "HR-recall", "max-recall", "TP-sum", "FP-sum"]
    body = [
        [name, r.metric, r.difficulty.name.lower(), _fmt(r.ap), _fmt(r.hr_precision),
         _fmt(100 * r.hr_recall, 1), _fmt(100 * r.curve.max_recall, 1), str(r.tp_sum), str(r.fp_sum)]
        for name, r in rows
    ]
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).rjust(w) for x, w in zip(line, widths)) for line in [header, *body]]
    return "\n".join(lines) + "\n"


def write_curve_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["recall", "precision", "tp", "fp"])
        for r, p, tp, fp in zip(report.curve.recall, report.curve.precision, report.curve.tp, report.curve.fp):
            w.writerow([f"{r:.4f}", "" if np.isnan(p) else f"{p:.6f}", int(tp), int(fp)])
