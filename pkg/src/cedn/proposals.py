"""Segmented object proposals from a contour map, and their evaluation.

Single-scale grouping: watershed superpixels over the contour map, then a
greedy merge tree that always joins the adjacent pair with the weakest mean
shared boundary. Every tree node is a candidate region.
"""
from dataclasses import dataclass, field
import csv
import heapq
import json
import math

import numpy as np
from scipy import ndimage
from skimage.morphology import local_minima
from skimage.segmentation import watershed

from .errors import InputError

AR_THRESHOLDS = np.round(np.arange(0.5, 0.951, 0.05), 2)


def watershed_regions(contours):
    """Leaf label map (0..n-1) flooded from the regional minima of ``contours``.

    Minima plateaus are numbered by their lowest pixel index; 4-connectivity.
    """
    c = np.asarray(contours, dtype=np.float64)
    if c.ndim != 2:
        raise InputError(f"contour map must be 2-D, got shape {c.shape}")
    minima = local_minima(c, connectivity=1, allow_borders=True)
    markers, count = ndimage.label(minima)
    if count == 0:  # constant map: one flat plateau
        return np.zeros(c.shape, dtype=np.int32)
    return watershed(c, markers, connectivity=1) - 1


def _boundary_pairs(leaves, contours):
    """(a, b, sum, count) over 4-adjacent pixel pairs in different leaves, a < b.

    A pair contributes the larger contour value of its two pixels.
    """
    la = np.concatenate([leaves[:, :-1].ravel(), leaves[:-1, :].ravel()])
    lb = np.concatenate([leaves[:, 1:].ravel(), leaves[1:, :].ravel()])
    v = np.concatenate([np.maximum(contours[:, :-1], contours[:, 1:]).ravel(),
                        np.maximum(contours[:-1, :], contours[1:, :]).ravel()])
    diff = la != lb
    a, b, v = la[diff], lb[diff], v[diff]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    n = int(leaves.max()) + 1
    key = lo.astype(np.int64) * n + hi
    uk, inv = np.unique(key, return_inverse=True)
    sums = np.bincount(inv, weights=v)
    counts = np.bincount(inv)
    return uk // n, uk % n, sums, counts


@dataclass
class RegionHierarchy:
    leaves: np.ndarray  # (H, W) leaf ids 0..n-1
    children: np.ndarray  # (n-1, 2) child node ids of merge node n + k
    strengths: np.ndarray  # (n-1,) ultrametric merge strengths
    raw_strengths: np.ndarray  # mean boundary before the running max
    # per node: summed boundary value / pair count to the outside, and inside
    outer: np.ndarray = field(repr=False, default=None)
    inner: np.ndarray = field(repr=False, default=None)

    @property
    def num_leaves(self):
        return len(self.children) + 1

    @property
    def num_nodes(self):
        return 2 * self.num_leaves - 1

    def node_leaves(self):
        """List of leaf-id arrays, one per node."""
        n = self.num_leaves
        sets = [np.array([i]) for i in range(n)]
        for a, b in self.children:
            sets.append(np.concatenate([sets[a], sets[b]]))
        return sets

    def node_mask(self, node):
        return np.isin(self.leaves, self.node_leaves()[node])

    def node_strength(self, node):
        """Merge strength of a node; leaves sit at 0."""
        n = self.num_leaves
        return 0.0 if node < n else float(self.strengths[node - n])

    def level_labels(self, k):
        """Partition after the first ``k`` merges, as a label map of node ids."""
        n = self.num_leaves
        owner = np.arange(n)
        for step in range(k):
            a, b = self.children[step]
            for leaf in self.node_leaves()[n + step]:
                owner[leaf] = n + step
        return owner[self.leaves]


def build_hierarchy(leaves, contours):
    leaves = np.asarray(leaves)
    contours = np.asarray(contours, dtype=np.float64)
    if leaves.shape != contours.shape:
        raise InputError(f"leaf map {leaves.shape} and contour map {contours.shape} differ")
    n = int(leaves.max()) + 1
    if leaves.min() < 0 or len(np.unique(leaves)) != n:
        raise InputError("leaf labels must be exactly 0..n-1")
    a, b, sums, counts = _boundary_pairs(leaves, contours)

    total = 2 * n - 1
    outer_s = np.zeros(total)
    outer_c = np.zeros(total)
    inner_s = np.zeros(total)
    inner_c = np.zeros(total)
    nbrs = [dict() for _ in range(n)]
    heap = []
    for i, j, s, c in zip(a, b, sums, counts):
        i, j = int(i), int(j)
        nbrs[i][j] = nbrs[j][i] = (s, c)
        outer_s[i] += s
        outer_s[j] += s
        outer_c[i] += c
        outer_c[j] += c
        heap.append((s / c, i, j))
    heapq.heapify(heap)

    alive = np.zeros(total, dtype=bool)
    alive[:n] = True
    children = np.zeros((n - 1, 2), dtype=np.int64)
    raw = np.zeros(n - 1)
    strengths = np.zeros(n - 1)
    for k in range(n - 1):
        while True:
            if not heap:
                raise InputError("leaf regions are not all connected")
            m, i, j = heapq.heappop(heap)
            if alive[i] and alive[j]:
                break
        new = n + k
        s_ij, c_ij = nbrs[i].pop(j)
        del nbrs[j][i]
        merged = {}
        for src in (nbrs[i], nbrs[j]):
            for nb, (s, c) in src.items():
                s0, c0 = merged.get(nb, (0.0, 0))
                merged[nb] = (s0 + s, c0 + c)
        for nb, sc in merged.items():
            nbrs[nb].pop(i, None)
            nbrs[nb].pop(j, None)
            nbrs[nb][new] = sc
            heapq.heappush(heap, (sc[0] / sc[1], nb, new))  # nb < new always
        nbrs.append(merged)
        nbrs[i] = nbrs[j] = None
        alive[i] = alive[j] = False
        alive[new] = True
        children[k] = (i, j)
        raw[k] = m
        prev = max(strengths[i - n] if i >= n else 0.0, strengths[j - n] if j >= n else 0.0)
        strengths[k] = max(m, prev)
        outer_s[new] = outer_s[i] + outer_s[j] - 2 * s_ij
        outer_c[new] = outer_c[i] + outer_c[j] - 2 * c_ij
        inner_s[new] = inner_s[i] + inner_s[j] + s_ij
        inner_c[new] = inner_c[i] + inner_c[j] + c_ij
    return RegionHierarchy(leaves, children, strengths, raw,
                           np.stack([outer_s, outer_c], 1), np.stack([inner_s, inner_c], 1))


@dataclass
class ProposalSet:
    masks: np.ndarray  # (K, H, W) bool
    scores: np.ndarray
    image_id: str = ""
    nodes: np.ndarray = None

    def __len__(self):
        return len(self.scores)

    def top(self, k):
        return ProposalSet(self.masks[:k], self.scores[:k], self.image_id,
                           None if self.nodes is None else self.nodes[:k])


def node_scores(h):
    """Boundary contrast times a square-root size prior, per node.

    Contrast is mean boundary strength to the rest of the image minus the mean
    strength of boundaries absorbed inside the node; the image border does not
    count as boundary.
    """
    leaf_sizes = np.bincount(h.leaves.ravel(), minlength=h.num_leaves).astype(np.float64)
    sizes = np.concatenate([leaf_sizes, np.zeros(h.num_leaves - 1)])
    for k, (a, b) in enumerate(h.children):
        sizes[h.num_leaves + k] = sizes[a] + sizes[b]
    out = np.divide(h.outer[:, 0], h.outer[:, 1], out=np.zeros(h.num_nodes), where=h.outer[:, 1] > 0)
    inn = np.divide(h.inner[:, 0], h.inner[:, 1], out=np.zeros(h.num_nodes), where=h.inner[:, 1] > 0)
    return (out - inn) * np.sqrt(sizes / h.leaves.size)


def extract_proposals(h, max_count, image_id=""):
    if max_count < 1:
        raise InputError(f"max_count must be >= 1, got {max_count}")
    scores = node_scores(h)
    order = sorted(range(h.num_nodes), key=lambda i: (-scores[i], i))
    sets = h.node_leaves()
    masks, kept, seen = [], [], set()
    for node in order:
        m = np.isin(h.leaves, sets[node])
        key = np.packbits(m).tobytes()
        if key in seen:
            continue
        seen.add(key)
        masks.append(m)
        kept.append(node)
        if len(kept) == max_count:
            break
    return ProposalSet(np.stack(masks), scores[kept], image_id, np.array(kept))


def proposals_from_contours(contours, max_count=1000, image_id=""):
    leaves = watershed_regions(contours)
    return extract_proposals(build_hierarchy(leaves, contours), max_count, image_id)


# -------------------------------------------------------------- evaluation

def jaccard(a, b):
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise InputError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    return 0.0 if union == 0 else np.count_nonzero(a & b) / union


def best_overlaps(proposals, gt_masks):
    """Best Jaccard of any proposal against each ground-truth mask."""
    masks = proposals.masks if isinstance(proposals, ProposalSet) else np.asarray(proposals)
    gt = np.asarray(gt_masks, dtype=bool)
    if len(masks) == 0:
        return np.zeros(len(gt))
    if masks.shape[1:] != gt.shape[1:]:
        raise InputError(f"proposal masks {masks.shape[1:]} and ground truth {gt.shape[1:]} differ")
    p = masks.reshape(len(masks), -1).astype(np.int64)
    g = gt.reshape(len(gt), -1).astype(np.int64)
    inter = g @ p.T
    union = g.sum(1)[:, None] + p.sum(1)[None, :] - inter
    iou = np.divide(inter, union, out=np.zeros(inter.shape), where=union > 0)
    return iou.max(axis=1)


def average_recall(overlaps, thresholds=None):
    ov = np.asarray(overlaps, dtype=np.float64)
    if ov.size == 0:
        raise InputError("no ground-truth objects to average over")
    t = AR_THRESHOLDS if thresholds is None else np.asarray(thresholds)
    hits = sum(int(np.count_nonzero(ov >= th)) for th in t)
    return hits / (ov.size * len(t))


def average_best_overlap(overlaps):
    ov = np.asarray(overlaps, dtype=np.float64)
    if ov.size == 0:
        raise InputError("no ground-truth objects to average over")
    return math.fsum(ov.tolist()) / ov.size


def per_class_ar(overlaps, classes, known=None, thresholds=None):
    """AR per class label; ``known`` restricts the admissible class names."""
    if len(overlaps) != len(classes):
        raise InputError(f"{len(overlaps)} overlaps but {len(classes)} class labels")
    if known is not None:
        bad = sorted(set(classes) - set(known))
        if bad:
            raise InputError(f"unknown class ids {bad}; expected one of {sorted(known)}")
    ov = np.asarray(overlaps, dtype=np.float64)
    cls = np.asarray(classes)
    return {c: average_recall(ov[cls == c], thresholds) for c in sorted(set(classes))}


def evaluate_proposals(proposal_sets, gt_mask_sets, class_sets, known=None, thresholds=None):
    overlaps, classes, counts = [], [], []
    for props, gts, cls in zip(proposal_sets, gt_mask_sets, class_sets):
        overlaps.extend(best_overlaps(props, gts))
        classes.extend(cls)
        counts.append(len(props))
    t = AR_THRESHOLDS if thresholds is None else np.asarray(thresholds)
    return {
        "ar": average_recall(overlaps, t),
        "abo": average_best_overlap(overlaps),
        "per_class": per_class_ar(overlaps, classes, known, t),
        "num_proposals": float(np.mean(counts)),
        "thresholds": [float(x) for x in t],
        "overlaps": [float(x) for x in overlaps],
    }


def ar_vs_count(proposal_sets, gt_mask_sets, counts, thresholds=None):
    """(count, AR, ABO) rows when each image keeps only its top-``count`` proposals."""
    rows = []
    for k in counts:
        ov = np.concatenate([best_overlaps(p.top(k), g) for p, g in zip(proposal_sets, gt_mask_sets)])
        rows.append((int(k), average_recall(ov, thresholds), average_best_overlap(ov)))
    return rows


def write_ar_csv(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["num_proposals", "ar", "abo"])
        for k, ar, abo in rows:
            wr.writerow([k, f"{ar:.6f}", f"{abo:.6f}"])


# ------------------------------------------------------------------ RLE io

def rle_encode(mask):
    """Row-major run lengths, starting with a (possibly empty) run of zeros."""
    flat = np.asarray(mask, dtype=bool).ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return {"size": list(np.shape(mask)), "counts": [int(r) for r in runs]}


def rle_decode(rle):
    try:
        h, w = rle["size"]
        counts = rle["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed RLE record: {exc}") from None
    if sum(counts) != h * w:
        raise InputError(f"RLE runs sum to {sum(counts)}, expected {h * w}")
    vals = np.arange(len(counts)) % 2 == 1
    return np.repeat(vals, counts).reshape(h, w)


def save_proposals(path, props):
    d = {"image_id": props.image_id,
         "proposals": [{"rle": rle_encode(m), "score": float(s)} for m, s in zip(props.masks, props.scores)]}
    with open(path, "w") as fh:
        json.dump(d, fh)


def load_proposals(path):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON ({exc.msg} at char {exc.pos})") from None
    try:
        items = d["proposals"]
        masks = [rle_decode(p["rle"]) for p in items]
        scores = np.array([float(p["score"]) for p in items])
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: missing field {exc}") from None
    if not masks:
        raise InputError(f"{path}: proposal list is empty")
    return ProposalSet(np.stack(masks), scores, d.get("image_id", ""))
