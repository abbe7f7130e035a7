"""Slow, loop-based reference for boundary matching and the summary measures."""
import math


def brute_match(pred, gt, tol):
    h, w = pred.shape
    ps = [(r, c) for r in range(h) for c in range(w) if pred[r, c]]
    gs = [(r, c) for r in range(h) for c in range(w) if gt[r, c]]
    pairs = []
    for i, (pr, pc) in enumerate(ps):
        for j, (gr, gc) in enumerate(gs):
            d = math.sqrt((pr - gr) ** 2 + (pc - gc) ** 2)
            if d <= tol + 1e-9:
                a, b = pr * w + pc, gr * w + gc
                pairs.append((round(d, 9), min(a, b), max(a, b), i, j))
    pairs.sort()
    up, ug = set(), set()
    for _, _, _, i, j in pairs:
        if i not in up and j not in ug:
            up.add(i)
            ug.add(j)
    return len(up), len(ps), len(ug), len(gs)


def brute_curve(preds, gts, thresholds, tol):
    """Per-image and pooled (t, P, R, F) lists."""
    per = []
    pooled = []
    for t in thresholds:
        tot = [0, 0, 0, 0]
        row = []
        for p, g in zip(preds, gts):
            c = brute_match(p >= t, g, tol)
            row.append(c)
            tot = [a + b for a, b in zip(tot, c)]
        per.append(row)
        pooled.append(_prf(t, tot))
    per_image = [[_prf(t, per[k][i]) for k, t in enumerate(thresholds)] for i in range(len(preds))]
    return pooled, per_image


def _prf(t, c):
    mp, tp, mg, tg = c
    p = mp / tp if tp else 0.0
    r = mg / tg if tg else 0.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return (t, p, r, f)


def brute_ods(pooled):
    best = pooled[0]
    for row in pooled[1:]:
        if row[3] > best[3]:
            best = row
    return best[0], best[3]


def brute_ois(per_image):
    return sum(max(r[3] for r in rows) for rows in per_image) / len(per_image)


def brute_ap(pooled):
    # step integral of the upper precision envelope over recall
    pts = sorted((r[2], r[1]) for r in pooled)
    terms, prev_r = [], 0.0
    for k, (rec, _) in enumerate(pts):
        env = max(p for rr, p in pts[k:] if rr >= rec)
        terms.append((rec - prev_r) * env)
        prev_r = rec
    return math.fsum(terms)
