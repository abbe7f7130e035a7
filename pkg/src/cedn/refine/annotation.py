"""Polygon instance annotations and their derived label maps."""
from dataclasses import dataclass, field
import json

import numpy as np
from scipy import ndimage

from ..errors import InputError, ParseError
from ..geometry import labelmap_to_contours, rasterize_polygon

UNCERTAIN = 255
BACKGROUND = 0


def disk(radius):
    r = int(np.ceil(radius))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return xx * xx + yy * yy <= radius * radius


@dataclass
class Instance:
    cls: str
    polygon: list  # [[x, y], ...]


@dataclass
class InstanceAnnotation:
    """Instances are listed back to front: later polygons occlude earlier ones."""

    width: int
    height: int
    instances: list = field(default_factory=list)
    band_radius: float = 2.0

    @property
    def num_instances(self):
        return len(self.instances)

    @property
    def classes(self):
        return [inst.cls for inst in self.instances]

    def polygon_labels(self):
        """Depth-composited label map of the polygons, without an uncertain band."""
        labels = np.zeros((self.height, self.width), dtype=np.int32)
        for k, inst in enumerate(self.instances, start=1):
            labels[rasterize_polygon(inst.polygon, (self.height, self.width))] = k
        return labels

    def label_map(self):
        """Label map with the uncertain band: ``UNCERTAIN`` wherever a pixel's
        disk of ``band_radius`` touches a different region."""
        return add_uncertain_band(self.polygon_labels(), self.band_radius)

    def to_dict(self):
        return {
            "width": self.width,
            "height": self.height,
            "band_radius": self.band_radius,
            "instances": [{"class": i.cls, "polygon": [list(map(float, p)) for p in i.polygon]}
                          for i in self.instances],
        }

    @classmethod
    def from_dict(cls, d):
        try:
            width, height = int(d["width"]), int(d["height"])
            insts = []
            for j, item in enumerate(d["instances"]):
                poly = [[float(x), float(y)] for x, y in item["polygon"]]
                if len(poly) < 3:
                    raise InputError(f"instance {j}: polygon has {len(poly)} vertices, need >= 3")
                insts.append(Instance(str(item["class"]), poly))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"annotation does not match schema: {exc!r}") from exc
        return cls(width, height, insts, float(d.get("band_radius", 2.0)))


def add_uncertain_band(labels, radius):
    if radius <= 0:
        return labels.copy()
    fp = disk(radius)
    out = np.full(labels.shape, UNCERTAIN, dtype=np.int32)
    for lab in np.unique(labels):
        core = ndimage.binary_erosion(labels == lab, structure=fp, border_value=1)
        out[core] = lab
    return out


def save_annotation(path, ann):
    with open(path, "w") as fh:
        json.dump(ann.to_dict(), fh, indent=1)


def load_annotation(path):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON: {exc.msg}", offset=exc.pos) from exc
    return InstanceAnnotation.from_dict(d)


__all__ = [
    "BACKGROUND",
    "UNCERTAIN",
    "Instance",
    "InstanceAnnotation",
    "add_uncertain_band",
    "labelmap_to_contours",
    "load_annotation",
    "save_annotation",
]
