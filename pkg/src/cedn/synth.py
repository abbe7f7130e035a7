"""Synthetic scenes of textured, mutually occluding shapes.

Each sample carries the exact instance masks and contours plus a deliberately
coarse polygon annotation (sub-sampled, jittered vertices and an uncertain
band) standing in for human polygon labelling.
"""
from dataclasses import asdict, dataclass, field
import json
import os

import numpy as np
from scipy import ndimage

from .errors import InputError, SpecError
from .geometry import labelmap_to_contours, rasterize_polygon
from .imageio import read_pgm, read_ppm, to_uint8, write_pnm
from .refine.annotation import Instance, InstanceAnnotation, load_annotation, save_annotation

SHAPE_CLASSES = ("ellipse", "rectangle", "triangle", "blob")


@dataclass
class SceneSpec:
    height: int = 96
    width: int = 96
    min_shapes: int = 2
    max_shapes: int = 4
    classes: tuple = SHAPE_CLASSES
    # shape radius as a fraction of min(height, width)
    min_radius: float = 0.12
    max_radius: float = 0.28
    noise: float = 0.06
    min_color_distance: float = 0.35
    vertex_keep: float = 0.5
    jitter: float = 0.8
    band_radius: float = 2.0
    min_visible: float = 0.5
    seed: int = 0

    def validate(self):
        if self.height < 32 or self.width < 32:
            raise SpecError(f"scene dims must be >= 32, got {self.height}x{self.width}")
        if self.min_shapes < 1 or self.max_shapes < self.min_shapes:
            raise SpecError(f"bad shape count range [{self.min_shapes}, {self.max_shapes}]")
        if self.jitter < 0:
            raise SpecError(f"jitter must be >= 0, got {self.jitter}")
        if not 0 < self.vertex_keep <= 1:
            raise SpecError(f"vertex_keep must lie in (0, 1], got {self.vertex_keep}")
        unknown = set(self.classes) - set(SHAPE_CLASSES)
        if unknown or not self.classes:
            raise SpecError(f"unknown shape classes {sorted(unknown)}")
        if 2 * self.max_radius * min(self.height, self.width) > min(self.height, self.width) - 2:
            raise SpecError(
                f"max_radius {self.max_radius} makes shapes larger than the {self.height}x{self.width} image"
            )
        if self.min_radius <= 0 or self.min_radius > self.max_radius:
            raise SpecError(f"bad radius range [{self.min_radius}, {self.max_radius}]")
        return self

    def to_dict(self):
        d = asdict(self)
        d["classes"] = list(self.classes)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "classes" in d:
            d["classes"] = tuple(d["classes"])
        return cls(**d)


@dataclass
class SceneSample:
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    labels: np.ndarray  # composited exact label map, 0 = background
    masks: np.ndarray  # (K, H, W) visible instance masks
    contours: np.ndarray  # exact visible contours
    annotation: InstanceAnnotation  # coarse polygons + band
    classes: list = field(default_factory=list)


def sample_rng(seed, index):
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def _shape_polygon(kind, cx, cy, radius, rng):
    rot = rng.uniform(0, np.pi)
    if kind == "ellipse":
        t = np.linspace(0, 2 * np.pi, 48, endpoint=False)
        aspect = rng.uniform(0.55, 1.0)
        pts = np.stack([radius * np.cos(t), aspect * radius * np.sin(t)], axis=1)
    elif kind == "rectangle":
        aspect = rng.uniform(0.5, 1.0)
        a, b = radius * 0.85, radius * 0.85 * aspect
        pts = np.array([[-a, -b], [a, -b], [a, b], [-a, b]])
    elif kind == "triangle":
        base = rng.uniform(0, 2 * np.pi)
        t = base + np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3]) + rng.uniform(-0.35, 0.35, 3)
        pts = np.stack([radius * np.cos(t), radius * np.sin(t)], axis=1)
    else:
        n = 28
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        # low-frequency radial wobble keeps the blob star-shaped
        wobble = np.zeros(n)
        for f in (2, 3):
            wobble += rng.uniform(-0.18, 0.18) * np.cos(f * t + rng.uniform(0, 2 * np.pi))
        rr = radius * (1 + wobble)
        pts = np.stack([rr * np.cos(t), rr * np.sin(t)], axis=1)
    c, s = np.cos(rot), np.sin(rot)
    pts = pts @ np.array([[c, s], [-s, c]])
    return pts + [cx, cy]


def coarsen_polygon(poly, kind, keep, jitter, rng):
    """Sub-sample curved outlines and jitter every vertex (displacement capped at 3 sigma)."""
    pts = np.asarray(poly, dtype=np.float64)
    if kind in ("ellipse", "blob") and keep < 1:
        n = max(3, int(round(len(pts) * keep)))
        idx = np.unique(np.linspace(0, len(pts), n, endpoint=False).astype(int))
        pts = pts[idx]
    if jitter > 0:
        d = rng.normal(0, jitter, pts.shape)
        norm = np.linalg.norm(d, axis=1, keepdims=True)
        cap = 3 * jitter
        d = np.where(norm > cap, d * cap / np.maximum(norm, 1e-12), d)
        pts = pts + d
    return pts


def _pick_color(existing, min_dist, rng):
    best, best_d = None, -1.0
    for _ in range(200):
        c = rng.uniform(0.1, 0.9, 3)
        d = min((np.linalg.norm(c - e) for e in existing), default=np.inf)
        if d >= min_dist:
            return c
        if d > best_d:
            best, best_d = c, d
    return best


def _visible_ok(labels, areas, min_visible):
    for k, area in enumerate(areas, start=1):
        vis = labels == k
        n = int(vis.sum())
        if n < min_visible * area:
            return False
        _, ncomp = ndimage.label(vis)
        if ncomp != 1:
            return False
    return True


def generate_scene(spec, index=0):
    spec.validate()
    rng = sample_rng(spec.seed, index)
    h, w = spec.height, spec.width
    side = min(h, w)
    target = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))

    labels = np.zeros((h, w), dtype=np.int32)
    polys, kinds, areas, colors = [], [], [], []
    bg_color = rng.uniform(0.1, 0.9, 3)
    for _ in range(target):
        for _attempt in range(60):
            kind = spec.classes[int(rng.integers(len(spec.classes)))]
            radius = rng.uniform(spec.min_radius, spec.max_radius) * side
            margin = radius * 1.25 + 1
            if 2 * margin >= min(h, w):
                raise SpecError(f"shape of radius {radius:.1f}px cannot fit a {h}x{w} image")
            cx = rng.uniform(margin, w - margin)
            cy = rng.uniform(margin, h - margin)
            poly = _shape_polygon(kind, cx, cy, radius, rng)
            if poly[:, 0].min() < 1 or poly[:, 1].min() < 1 or poly[:, 0].max() > w - 1 or poly[:, 1].max() > h - 1:
                continue
            m = rasterize_polygon(poly, (h, w))
            if m.sum() < 30:
                continue
            trial = labels.copy()
            trial[m] = len(polys) + 1
            if not _visible_ok(trial, areas + [int(m.sum())], spec.min_visible):
                continue
            labels = trial
            polys.append(poly)
            kinds.append(kind)
            areas.append(int(m.sum()))
            colors.append(_pick_color([bg_color] + colors, spec.min_color_distance, rng))
            break
    if not polys:
        raise SpecError("could not place any shape; loosen radius or visibility constraints")

    palette = np.vstack([bg_color] + colors)
    image = palette[labels]
    image = image + rng.uniform(-spec.noise, spec.noise, image.shape)
    image = np.clip(image, 0, 1)

    k = len(polys)
    masks = np.stack([labels == i for i in range(1, k + 1)])
    coarse = [
        Instance(kind, coarsen_polygon(p, kind, spec.vertex_keep, spec.jitter, rng).tolist())
        for p, kind in zip(polys, kinds)
    ]
    ann = InstanceAnnotation(w, h, coarse, spec.band_radius)
    return SceneSample(image, labels, masks, labelmap_to_contours(labels), ann, list(kinds))


def generate_dataset(spec, count):
    return [generate_scene(spec, i) for i in range(count)]


# ---------------------------------------------------------------- directory io

def sample_id(i):
    return f"{i:05d}"


def save_dataset(root, samples, spec, seeds=None):
    for sub in ("images", "masks", "contours", "annotations"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        sid = sample_id(i)
        write_pnm(os.path.join(root, "images", sid + ".ppm"), to_uint8(s.image))
        write_pnm(os.path.join(root, "masks", sid + ".pgm"), s.labels.astype(np.uint8))
        write_pnm(os.path.join(root, "contours", sid + ".pgm"), s.contours.astype(np.uint8) * 255)
        save_annotation(os.path.join(root, "annotations", sid + ".json"), s.annotation)
        entries.append({"id": sid, "index": i, "seed": [spec.seed, i], "classes": s.classes})
    manifest = {"spec": spec.to_dict(), "samples": entries}
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def load_manifest(root):
    path = os.path.join(root, "manifest.json")
    if not os.path.exists(path):
        raise InputError(f"{root}: no manifest.json; run gen-data first")
    with open(path) as fh:
        return json.load(fh)


def load_sample(root, entry):
    sid = entry["id"]
    image = read_ppm(os.path.join(root, "images", sid + ".ppm")).astype(np.float64) / 255
    labels = read_pgm(os.path.join(root, "masks", sid + ".pgm")).astype(np.int32)
    contours = read_pgm(os.path.join(root, "contours", sid + ".pgm")) > 0
    ann = load_annotation(os.path.join(root, "annotations", sid + ".json"))
    k = ann.num_instances
    masks = np.stack([labels == i for i in range(1, k + 1)]) if k else np.zeros((0,) + labels.shape, bool)
    return SceneSample(image, labels, masks, contours, ann, list(entry.get("classes", ann.classes)))


def load_dataset(root):
    manifest = load_manifest(root)
    return [load_sample(root, e) for e in manifest["samples"]]
