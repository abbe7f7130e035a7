"""Fully connected CRF over pixels, solved by mean-field iteration.

Pairwise term is a Potts model with two Gaussian kernels: an appearance
kernel over (position, colour) and a smoothness kernel over position only.
Messages are summed exactly over all pixel pairs. The smoothness kernel is
separable on the pixel grid and is applied as two dense 1-D Gaussian
matrices; the appearance kernel is evaluated block by block, which bounds
memory at ``block * N`` floats and time at O(N^2) per iteration.
"""
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InputError, ParameterError
from ..geometry import labelmap_to_contours
from .annotation import UNCERTAIN


@dataclass
class CrfParams:
    w_app: float = 10.0
    theta_spatial: float = 20.0
    theta_color: float = 13.0  # in 0..255 intensity units
    w_smooth: float = 3.0
    theta_gamma: float = 3.0
    iterations: int = 10
    unary_confidence: float = 0.95
    max_cost: float = 1e3
    # fraction of each parallel update applied; 1.0 is the undamped update,
    # which can oscillate between strongly coupled pixels
    damping: float = 0.5
    tol: float = 1e-4
    block: int = 1024
    # the appearance kernel is cached as float32 when N^2 * 4 bytes fits here
    cache_bytes: float = 6e8

    def validate(self):
        if self.w_app < 0 or self.w_smooth < 0:
            raise ParameterError("kernel weights must be >= 0")
        if min(self.theta_spatial, self.theta_color, self.theta_gamma) <= 0:
            raise ParameterError("kernel bandwidths must be > 0")
        if self.iterations < 1:
            raise ParameterError("need at least one mean-field iteration")
        if not 0 < self.damping <= 1:
            raise ParameterError(f"damping must lie in (0, 1], got {self.damping}")
        if not 0 < self.unary_confidence <= 1:
            raise ParameterError(f"unary_confidence must lie in (0, 1], got {self.unary_confidence}")
        return self

    def to_dict(self):
        return asdict(self)


def build_unary(ann, params):
    """Unary cost field (H, W, K + 1) for an InstanceAnnotation."""
    if ann.num_instances == 0:
        raise InputError("annotation has no instances; nothing to refine")
    return unary_from_labels(ann.label_map(), ann.num_instances + 1, params)


def unary_from_labels(labels, num_labels, params):
    """Per-pixel label costs (H, W, L) from an annotation label map.

    ``labels`` holds 0..L-1 for annotated pixels and ``UNCERTAIN`` in the
    band. Annotated pixels cost ``-log(confidence)`` for their own label and
    ``-log((1 - confidence) / (L - 1))`` for the rest, capped at
    ``max_cost``; band pixels cost the same for every label.
    """
    params.validate()
    labels = np.asarray(labels)
    if num_labels < 2:
        raise InputError("annotation has no instances; nothing to refine")
    known = labels != UNCERTAIN
    if np.any(labels[known] >= num_labels) or np.any(labels[known] < 0):
        raise InputError(f"label map holds labels outside 0..{num_labels - 1}")
    conf = params.unary_confidence
    own = -np.log(conf)
    other = params.max_cost if conf >= 1 else min(params.max_cost, -np.log((1 - conf) / (num_labels - 1)))
    unary = np.full(labels.shape + (num_labels,), other, dtype=np.float64)
    li = np.where(known, labels, 0)
    np.put_along_axis(unary, li[..., None], own, axis=-1)
    unary[~known] = np.log(num_labels)
    return unary


def _gauss_matrix(n, theta):
    d = np.arange(n)[:, None] - np.arange(n)[None, :]
    return np.exp(-(d * d) / (2.0 * theta * theta))


class PairwiseKernel:
    """Exact dense Potts pairwise messages for one image."""

    def __init__(self, image, params):
        img = np.asarray(image)
        # float images are [0, 1]; integer images are already 0..255
        img = img.astype(np.float64) * (255.0 if img.dtype.kind == "f" else 1.0)
        if img.ndim == 2:
            img = img[:, :, None]
        if img.shape[2] not in (1, 3):
            raise InputError(f"image must have 1 or 3 channels, got {img.shape[2]}")
        self.h, self.w = img.shape[:2]
        self.params = params
        yy, xx = np.mgrid[0:self.h, 0:self.w]
        pos = np.stack([xx.ravel(), yy.ravel()], axis=1) / params.theta_spatial
        col = img.reshape(-1, img.shape[2]) / params.theta_color
        self.feat = np.hstack([pos, col])
        self.sq = np.sum(self.feat ** 2, axis=1)
        self.gy = _gauss_matrix(self.h, params.theta_gamma)
        self.gx = _gauss_matrix(self.w, params.theta_gamma)
        n = len(self.feat)
        self._cache = [] if 4.0 * n * n <= params.cache_bytes else None
        self._cached = False

    def _app_blocks(self):
        n = len(self.feat)
        step = self.params.block
        if self._cached:
            for s, k in zip(range(0, n, step), self._cache):
                yield slice(s, min(n, s + step)), k
            return
        for s in range(0, n, step):
            e = slice(s, min(n, s + step))
            d2 = self.sq[e, None] + self.sq[None, :] - 2.0 * (self.feat[e] @ self.feat.T)
            np.maximum(d2, 0, out=d2)
            k = np.exp(-0.5 * d2)
            if self._cache is not None:
                k = k.astype(np.float32)
                self._cache.append(k)
            yield e, k
        if self._cache is not None:
            self._cached = True

    def messages(self, q):
        """sum_{j != i} k(i, j) q_j for q of shape (N, L)."""
        p = self.params
        out = np.zeros_like(q)
        if p.w_smooth > 0:
            ql = q.reshape(self.h, self.w, -1)
            sm = np.einsum("ab,bcl->acl", self.gy, ql)
            sm = np.einsum("cd,adl->acl", self.gx, sm)
            out += p.w_smooth * (sm.reshape(q.shape) - q)
        if p.w_app > 0:
            qk = q.astype(np.float32) if self._cache is not None else q
            for e, k in self._app_blocks():
                out[e] += p.w_app * ((k @ qk) - qk[e])  # drop the self term, k(i, i) = 1
        return out

    def row_sums(self):
        return self.messages(np.ones((self.h * self.w, 1)))[:, 0]

    def dense(self):
        """Full N x N pairwise weight matrix (tests and tiny images only)."""
        p = self.params
        d2 = self.sq[:, None] + self.sq[None, :] - 2.0 * (self.feat @ self.feat.T)
        yy, xx = np.divmod(np.arange(self.h * self.w), self.w)
        s2 = (xx[:, None] - xx[None, :]) ** 2 + (yy[:, None] - yy[None, :]) ** 2
        wgt = p.w_app * np.exp(-0.5 * np.maximum(d2, 0)) + p.w_smooth * np.exp(-s2 / (2 * p.theta_gamma ** 2))
        np.fill_diagonal(wgt, 0)
        return wgt


def flip_threshold(image, params):
    """Largest total pairwise weight any pixel receives. A labelled pixel whose
    competing-label cost exceeds this can never change label."""
    return float(PairwiseKernel(image, params).row_sums().max())


def _softmax_neg(cost):
    z = -cost
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class MeanFieldResult:
    labels: np.ndarray
    marginals: np.ndarray  # (H, W, L)
    converged: bool
    iterations: int
    max_change: float


def meanfield_infer(unary, image, params):
    params.validate()
    unary = np.asarray(unary, dtype=np.float64)
    if not np.all(np.isfinite(unary)):
        raise InputError("unary costs must be finite")
    h, w, nl = unary.shape
    kern = PairwiseKernel(image, params)
    if (kern.h, kern.w) != (h, w):
        raise InputError(f"image {kern.h}x{kern.w} does not match unary {h}x{w}")
    u = unary.reshape(-1, nl)
    q = _softmax_neg(u)
    change = np.inf
    it = 0
    for it in range(1, params.iterations + 1):
        # Potts: cost of label l is sum_j k_ij (1 - q_j(l)) = const - sum_j k_ij q_j(l)
        new = _softmax_neg(u - kern.messages(q))
        if params.damping < 1:
            new = (1 - params.damping) * q + params.damping * new
        change = float(np.abs(new - q).max())
        q = new
        if change < params.tol:
            break
    converged = change < params.tol
    return MeanFieldResult(q.argmax(axis=1).reshape(h, w), q.reshape(h, w, nl), converged, it, change)


def potts_energy(labels, unary, weights):
    """Energy of a full labelling under a dense weight matrix (oracle helper)."""
    x = np.asarray(labels).ravel()
    u = np.asarray(unary).reshape(len(x), -1)
    e = u[np.arange(len(x)), x].sum()
    diff = x[:, None] != x[None, :]
    return float(e + 0.5 * np.sum(weights * diff))


def refine_annotation(ann, image, params=None):
    """Fill the uncertain band of ``ann`` by dense-CRF inference.

    Returns ``(refined_labels, contours, result)``.
    """
    params = params or CrfParams()
    unary = build_unary(ann, params)
    res = meanfield_infer(unary, image, params)
    return res.labels, labelmap_to_contours(res.labels), res
