"""Boundary evaluation: NMS thinning, tolerance matching, PR curves, ODS/OIS/AP."""
from dataclasses import dataclass
import csv
import json
import math

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import InputError

DEFAULT_TOL_FRACTION = 0.0075


def default_thresholds(n=33):
    """``n`` evenly spaced thresholds strictly inside (0, 1)."""
    return np.linspace(0, 1, n + 2)[1:-1]


def default_tolerance(shape, fraction=DEFAULT_TOL_FRACTION):
    return fraction * float(np.hypot(*shape[:2]))


def f_measure(p, r):
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


# ---------------------------------------------------------------------- NMS

# neighbour offsets (dr, dc) for the scanline-earlier side of each normal bin
_BEFORE = {0: (0, -1), 1: (-1, -1), 2: (-1, 0), 3: (-1, 1)}


def ridge_normal_bins(cmap, sigma=1.0):
    """Quantised ridge-normal direction per pixel: 0 = horizontal, 1 = 45 deg
    (down-right), 2 = vertical, 3 = 135 deg (down-left).

    The normal is the eigenvector of the most negative Hessian eigenvalue,
    with the Hessian taken as Sobel-of-Sobel on a Gaussian-smoothed copy.
    """
    s = ndimage.gaussian_filter(np.asarray(cmap, dtype=np.float64), sigma, mode="nearest")
    gx = ndimage.sobel(s, axis=1, mode="nearest")
    gy = ndimage.sobel(s, axis=0, mode="nearest")
    hxx = ndimage.sobel(gx, axis=1, mode="nearest")
    hyy = ndimage.sobel(gy, axis=0, mode="nearest")
    hxy = ndimage.sobel(gx, axis=0, mode="nearest")
    # major-eigenvector angle, rotated a quarter turn to the minor (most negative) one
    angle = 0.5 * np.arctan2(2 * hxy, hxx - hyy) + np.pi / 2
    return np.round(np.mod(angle, np.pi) / (np.pi / 4)).astype(int) % 4


def nms_thin(cmap, sigma=1.0):
    """Keep pixels that are maximal across their ridge; others become 0.

    On plateaus the first pixel of an equal-valued run (in scanline order)
    survives. Out-of-image neighbours repeat the edge value.
    """
    m = np.asarray(cmap, dtype=np.float64)
    bins = ridge_normal_bins(m, sigma)
    padded = np.pad(m, 1, mode="edge")
    h, w = m.shape
    keep = np.zeros(m.shape, dtype=bool)
    for b, (dr, dc) in _BEFORE.items():
        before = padded[1 + dr:1 + dr + h, 1 + dc:1 + dc + w]
        after = padded[1 - dr:1 - dr + h, 1 - dc:1 - dc + w]
        keep |= (bins == b) & (m > before) & (m >= after)
    return np.where(keep, cmap, 0).astype(np.asarray(cmap).dtype)


# ----------------------------------------------------------------- matching

@dataclass
class MatchResult:
    matched_pred: int
    matched_gt: int
    unmatched_pred: int
    unmatched_gt: int
    tol: float

    @property
    def total_pred(self):
        return self.matched_pred + self.unmatched_pred

    @property
    def total_gt(self):
        return self.matched_gt + self.unmatched_gt

    @property
    def precision(self):
        return self.matched_pred / self.total_pred if self.total_pred else 0.0

    @property
    def recall(self):
        return self.matched_gt / self.total_gt if self.total_gt else 0.0


def match_boundaries(pred, gt, tol):
    """Greedy one-to-one matching of boundary pixels within ``tol`` pixels.

    Candidate pairs are taken in ascending distance, ties broken by the
    unordered pair of flat indices, so swapping the arguments swaps the counts.
    """
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise InputError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    if tol < 0:
        raise InputError(f"tolerance must be >= 0, got {tol}")
    pi = np.flatnonzero(pred)
    gi = np.flatnonzero(gt)
    n_p, n_g = len(pi), len(gi)
    if n_p == 0 or n_g == 0:
        return MatchResult(0, 0, n_p, n_g, tol)
    w = pred.shape[1]
    pp = np.stack(np.divmod(pi, w), axis=1).astype(np.float64)
    gp = np.stack(np.divmod(gi, w), axis=1).astype(np.float64)
    sdm = cKDTree(pp).sparse_distance_matrix(cKDTree(gp), tol + 1e-9, output_type="coo_matrix")
    a, b, d = sdm.row, sdm.col, sdm.data
    # zero-distance pairs are dropped from sparse output; restore them
    both = np.intersect1d(pi, gi)
    if len(both):
        a = np.concatenate([np.searchsorted(pi, both), a])
        b = np.concatenate([np.searchsorted(gi, both), b])
        d = np.concatenate([np.zeros(len(both)), d])
    fa, fb = pi[a], gi[b]
    order = np.lexsort((np.maximum(fa, fb), np.minimum(fa, fb), np.round(d, 9)))
    used_p = np.zeros(n_p, dtype=bool)
    used_g = np.zeros(n_g, dtype=bool)
    m = 0
    for k in order:
        i, j = a[k], b[k]
        if not used_p[i] and not used_g[j]:
            used_p[i] = used_g[j] = True
            m += 1
    return MatchResult(m, m, n_p - m, n_g - m, tol)


# ------------------------------------------------------------------ PR/ODS

@dataclass
class PRPoint:
    threshold: float
    precision: float
    recall: float
    f: float


def _check_thresholds(thresholds):
    t = np.asarray(thresholds, dtype=np.float64)
    if t.ndim != 1 or len(t) == 0:
        raise InputError("need a non-empty 1-D threshold list")
    if np.any(t < 0) or np.any(t > 1) or np.any(np.diff(t) <= 0):
        raise InputError("thresholds must be strictly increasing within [0, 1]")
    return t


def pr_counts(pred_maps, gts, thresholds=None, tol=None):
    """Matching counts per image and threshold.

    ``pred_maps`` should already be NMS-thinned. Returns an int array of
    shape (images, thresholds, 4) holding (matched_pred, total_pred,
    matched_gt, total_gt). ``tol`` defaults to the diagonal rule per image.
    """
    if len(pred_maps) == 0 or len(pred_maps) != len(gts):
        raise InputError(f"need equally many predictions and ground truths, got {len(pred_maps)} / {len(gts)}")
    t = _check_thresholds(default_thresholds() if thresholds is None else thresholds)
    out = np.zeros((len(pred_maps), len(t), 4), dtype=np.int64)
    for i, (p, g) in enumerate(zip(pred_maps, gts)):
        p = np.asarray(p, dtype=np.float64)
        tol_i = default_tolerance(p.shape) if tol is None else tol
        for j, th in enumerate(t):
            r = match_boundaries(p >= th, g, tol_i)
            out[i, j] = (r.matched_pred, r.total_pred, r.matched_gt, r.total_gt)
    return out


def curve_from_counts(counts, thresholds):
    """PR points from (thresholds, 4) pooled counts."""
    pts = []
    for th, (mp, tp, mg, tg) in zip(thresholds, counts):
        p = mp / tp if tp else 0.0
        r = mg / tg if tg else 0.0
        pts.append(PRPoint(float(th), float(p), float(r), float(f_measure(p, r))))
    return pts


def pr_curve(pred_maps, gts, thresholds=None, tol=None):
    """Dataset-pooled PR curve."""
    t = default_thresholds() if thresholds is None else thresholds
    counts = pr_counts(pred_maps, gts, t, tol)
    return curve_from_counts(counts.sum(axis=0), t)


def ods(curve):
    """Best shared threshold: ``(threshold, F)``; the lowest threshold wins ties."""
    if not curve:
        raise InputError("empty PR curve")
    best = max(curve, key=lambda pt: (pt.f, -pt.threshold))
    return best.threshold, best.f


def ois(per_image_curves):
    """Mean over images of each image's own best F."""
    if not per_image_curves:
        raise InputError("no per-image curves")
    return float(np.mean([ods(c)[1] for c in per_image_curves]))


def average_precision(curve):
    """Area under the monotone precision envelope, integrated over recall.

    The envelope at recall r is the best precision reached at recall >= r;
    it is a step function anchored at recall 0, integrated exactly.
    """
    if not curve:
        raise InputError("empty PR curve")
    pts = sorted(((pt.recall, pt.precision) for pt in curve), key=lambda x: (x[0], -x[1]))
    r = np.array([0.0] + [x[0] for x in pts])
    p = np.array([x[1] for x in pts])
    env = np.maximum.accumulate(p[::-1])[::-1]
    # exactly rounded sum, independent of summation order
    return math.fsum(np.diff(r) * env)


@dataclass
class ContourReport:
    thresholds: list
    curve: list
    per_image: list
    ods_t: float
    ods_f: float
    ois_f: float
    ap: float

    def summary(self):
        return {"ods_f": float(self.ods_f), "ods_t": float(self.ods_t), "ois_f": float(self.ois_f), "ap": float(self.ap)}


def evaluate_contours(pred_maps, gt_masks, thresholds=None, tol=None, apply_nms=True, thin_gt=True, sigma=1.0):
    """Full protocol: NMS on predictions, 1-pixel GT boundaries, pooled PR, ODS/OIS/AP.

    Ground-truth masks drawn on both sides of a region boundary are thinned
    with the same NMS the predictions get, since one-to-one matching would
    otherwise cap recall of any thin detector near 0.5. Using one operator
    on both sides means a prediction equal to the ground truth scores F = 1.
    """
    t = default_thresholds() if thresholds is None else np.asarray(thresholds)
    preds = [nms_thin(p, sigma) if apply_nms else np.asarray(p, dtype=np.float64) for p in pred_maps]
    gts = [nms_thin(np.asarray(g, dtype=np.float64), sigma) > 0 if thin_gt else np.asarray(g, dtype=bool)
           for g in gt_masks]
    counts = pr_counts(preds, gts, t, tol)
    curve = curve_from_counts(counts.sum(axis=0), t)
    per_image = [curve_from_counts(c, t) for c in counts]
    ods_t, ods_f = ods(curve)
    return ContourReport(list(map(float, t)), curve, per_image, ods_t, ods_f, ois(per_image), average_precision(curve))


def write_pr_csv(path, curve):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["threshold", "precision", "recall", "f"])
        for pt in curve:
            wr.writerow([f"{pt.threshold:.6f}", f"{pt.precision:.6f}", f"{pt.recall:.6f}", f"{pt.f:.6f}"])


def read_pr_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return [PRPoint(float(r["threshold"]), float(r["precision"]), float(r["recall"]), float(r["f"])) for r in rows]


def write_summary_json(path, report, extra=None):
    d = report.summary()
    if extra:
        d.update(extra)
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)
    return d
