"""Polygon rasterization and label-map boundary extraction."""
import numpy as np

from .errors import InputError


def rasterize_polygon(vertices, dims):
    """Even-odd scanline fill of a polygon given as (x, y) vertices.

    Pixel (r, c) is sampled at its centre (c + 0.5, r + 0.5); samples lying
    exactly on an edge count as inside.
    """
    v = np.asarray(vertices, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise InputError(f"polygon needs at least 3 (x, y) vertices, got shape {v.shape}")
    h, w = dims
    mask = np.zeros((h, w), dtype=bool)
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    cx = np.arange(w) + 0.5
    lo_row = max(0, int(np.floor(y0.min() - 0.5)))
    hi_row = min(h - 1, int(np.ceil(y0.max() - 0.5)))
    for r in range(lo_row, hi_row + 1):
        y = r + 0.5
        # half-open rule avoids double counting shared vertices
        crosses = (y0 <= y) != (y1 <= y)
        if crosses.any():
            t = (y - y0[crosses]) / (y1[crosses] - y0[crosses])
            xs = np.sort(x0[crosses] + t * (x1[crosses] - x0[crosses]))
            for a, b in zip(xs[0::2], xs[1::2]):
                mask[r] |= (cx >= a) & (cx <= b)
        # edges passing through the sample row
        on = np.abs((y1 - y0)) > 0
        oy = on & (np.minimum(y0, y1) <= y) & (np.maximum(y0, y1) >= y)
        if oy.any():
            t = (y - y0[oy]) / (y1[oy] - y0[oy])
            xs = x0[oy] + t * (x1[oy] - x0[oy])
            hit = np.abs(cx[None, :] - xs[:, None]) < 1e-9
            mask[r] |= hit.any(axis=0)
        flat = (y0 == y) & (y1 == y)
        for a, b in zip(x0[flat], x1[flat]):
            mask[r] |= (cx >= min(a, b)) & (cx <= max(a, b))
    return mask


def labelmap_to_contours(labels):
    """Boundary pixels of a label map: any 4-neighbour carries a different label."""
    lab = np.asarray(labels)
    out = np.zeros(lab.shape, dtype=bool)
    dv = lab[1:, :] != lab[:-1, :]
    dh = lab[:, 1:] != lab[:, :-1]
    out[1:, :] |= dv
    out[:-1, :] |= dv
    out[:, 1:] |= dh
    out[:, :-1] |= dh
    return out
