import numpy as np
import pytest
from scipy import ndimage

from cedn.errors import InputError, ParseError, SpecError
from cedn.geometry import labelmap_to_contours, rasterize_polygon
from cedn.imageio import decode_pnm, encode_pnm, read_pnm, write_pnm
from cedn.refine.annotation import UNCERTAIN
from cedn.synth import SceneSpec, generate_scene, load_dataset, save_dataset, generate_dataset


def _ray_cast(vertices, dims):
    """Independent even-odd point test at pixel centres (crossing-number rule)."""
    h, w = dims
    v = [tuple(p) for p in vertices]
    out = np.zeros(dims, bool)
    for r in range(h):
        for c in range(w):
            x, y = c + 0.5, r + 0.5
            inside = False
            for (xa, ya), (xb, yb) in zip(v, v[1:] + v[:1]):
                if (ya > y) != (yb > y):
                    xi = xa + (y - ya) * (xb - xa) / (yb - ya)
                    if x < xi:
                        inside = not inside
            out[r, c] = inside
    return out


def _edge_distance(verts, x, y):
    best = np.inf
    for (xa, ya), (xb, yb) in zip(verts, np.roll(verts, -1, axis=0)):
        d = np.array([xb - xa, yb - ya])
        t = np.clip(np.dot([x - xa, y - ya], d) / max(np.dot(d, d), 1e-300), 0, 1)
        best = min(best, np.hypot(x - xa - t * d[0], y - ya - t * d[1]))
    return best


# ------------------------------------------------------------ rasterize

def test_square_sixteen_pixels():
    m = rasterize_polygon([(2, 2), (6, 2), (6, 6), (2, 6)], (10, 10))
    assert m.sum() == 16
    assert m[2:6, 2:6].all()


@pytest.mark.parametrize("a,b", [(10, 6), (7, 13), (20, 20)])
def test_right_triangle_area_bound(a, b):
    m = rasterize_polygon([(1, 1), (1 + a, 1), (1, 1 + b)], (30, 30))
    assert abs(m.sum() - a * b / 2) <= a + b


def test_bowtie_even_odd():
    verts = [(1, 1), (11, 9), (11, 1), (1, 9)]
    m = rasterize_polygon(verts, (10, 12))
    ref = _ray_cast(verts, (10, 12))
    # away from the edges the two fills agree; edge samples are included by ours
    assert np.all(m[ref])
    assert np.count_nonzero(m & ~ref) <= 12
    _, lobes = ndimage.label(ref)
    assert lobes == 2
    assert not m[1, 6] and not m[8, 6]  # top and bottom wedges stay empty


def test_random_polygons_match_ray_cast_off_edges():
    rng = np.random.default_rng(0)
    for _ in range(10):
        verts = rng.uniform(0.3, 15.7, (int(rng.integers(3, 8)), 2))
        m = rasterize_polygon(verts, (16, 16))
        ref = _ray_cast([tuple(p) for p in verts], (16, 16))
        assert np.all(m[ref])
        for r, c in np.argwhere(m & ~ref):
            assert _edge_distance(verts, c + 0.5, r + 0.5) < 1e-9


def test_too_few_vertices():
    with pytest.raises(InputError):
        rasterize_polygon([(0, 0), (3, 3)], (5, 5))


# ------------------------------------------------------------ contours

def test_contour_cases():
    assert not labelmap_to_contours(np.ones((5, 5), int)).any()
    half = np.zeros((6, 8), int)
    half[:, 4:] = 1
    c = labelmap_to_contours(half)
    assert c[:, 3].all() and c[:, 4].all() and c.sum() == 12


# ---------------------------------------------------------------- scenes

def test_same_seed_bit_identical():
    spec = SceneSpec(seed=13)
    a, b = generate_scene(spec, 4), generate_scene(spec, 4)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.labels, b.labels)
    assert a.annotation.to_dict() == b.annotation.to_dict()
    assert not np.array_equal(a.image, generate_scene(spec, 5).image)


def test_one_rectangle_no_corruption_equals_exact():
    spec = SceneSpec(min_shapes=1, max_shapes=1, classes=("rectangle",), jitter=0.0, band_radius=0.0, seed=3)
    for i in range(4):
        s = generate_scene(spec, i)
        assert np.array_equal(s.annotation.label_map(), s.labels)


def test_occluded_boundary_absent():
    spec = SceneSpec(min_shapes=2, max_shapes=2, seed=1)
    for i in range(10):
        s = generate_scene(spec, i)
        if len(s.classes) < 2:
            continue
        back = rasterize_polygon(s.annotation.instances[0].polygon, s.labels.shape)
        # the composite-then-extract oracle: contour of the back shape's full
        # silhouette, restricted to pixels covered by the front shape's interior
        front_interior = ndimage.binary_erosion(s.labels == 2)
        hidden = labelmap_to_contours(back.astype(int)) & front_interior
        assert not (s.contours & hidden).any()
        assert np.array_equal(s.contours, labelmap_to_contours(s.labels))


def test_masks_disjoint_and_cover():
    for i in range(8):
        s = generate_scene(SceneSpec(seed=2), i)
        total = s.masks.sum(axis=0)
        assert total.max() <= 1
        assert np.array_equal(total == 0, s.labels == 0)


def test_corruption_local_to_boundaries():
    spec = SceneSpec(seed=8)
    for i in range(12):
        s = generate_scene(spec, i)
        coarse = s.annotation.label_map()
        dist = ndimage.distance_transform_edt(~s.contours)
        # +1 px slack covers polygon-vs-pixel-grid discretisation
        far = dist > 3 * spec.jitter + spec.band_radius + 1
        assert np.count_nonzero(coarse[far] != s.labels[far]) == 0
        assert np.any(coarse == UNCERTAIN)


def test_spec_errors():
    with pytest.raises(SpecError):
        SceneSpec(height=16).validate()
    with pytest.raises(SpecError):
        SceneSpec(jitter=-1).validate()
    with pytest.raises(SpecError):
        SceneSpec(max_radius=0.6).validate()
    with pytest.raises(SpecError):
        SceneSpec(classes=("hexagon",)).validate()


# ------------------------------------------------------------------- pnm

def test_pnm_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    for shape in [(5, 7, 3), (4, 9), (1, 1)]:
        img = rng.integers(0, 256, shape, dtype=np.uint8)
        write_pnm(tmp_path / "x.pnm", img)
        assert np.array_equal(read_pnm(tmp_path / "x.pnm"), img)


def test_p5_byte_count():
    data = encode_pnm(np.zeros((2, 2), np.uint8))
    header = b"P5\n2 2\n255\n"
    assert data.startswith(header) and len(data) == len(header) + 4


def test_header_comments_allowed():
    data = b"P5\n# made by hand\n2 1\n255\n\x01\x02"
    assert decode_pnm(data).tolist() == [[1, 2]]


def test_truncated_payload():
    data = encode_pnm(np.zeros((3, 3), np.uint8))[:-2]
    with pytest.raises(ParseError, match="expected 9 bytes, got 7") as exc:
        decode_pnm(data)
    assert exc.value.offset == len(data)


def test_bad_magic_and_header():
    with pytest.raises(ParseError) as exc:
        decode_pnm(b"P3\n1 1\n255\n0")
    assert exc.value.offset == 0
    with pytest.raises(ParseError):
        decode_pnm(b"P5\n2 x\n255\n\x00\x00")
    with pytest.raises(ParseError):
        decode_pnm(b"P5\n1 1\n65535\n\x00\x00")


def test_dataset_directory_roundtrip(tmp_path):
    spec = SceneSpec(seed=4)
    samples = generate_dataset(spec, 3)
    save_dataset(tmp_path, samples, spec)
    for sub in ("images", "masks", "contours", "annotations"):
        assert len(list((tmp_path / sub).iterdir())) == 3
    back = load_dataset(tmp_path)
    for a, b in zip(samples, back):
        assert np.abs(a.image - b.image).max() <= 0.5 / 255 + 1e-12
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.contours, b.contours)
        assert np.array_equal(a.masks, b.masks)
        assert a.classes == b.classes
        assert np.array_equal(a.annotation.label_map(), b.annotation.label_map())
