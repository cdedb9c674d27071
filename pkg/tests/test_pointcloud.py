import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pcda import shapes
from pcda.errors import (
    BadIndex,
    CountMismatch,
    DegenerateMesh,
    EmptyRoster,
    MalformedHeader,
    TooManyRequested,
)
from pcda.pointcloud import (
    Mesh,
    PointCloud,
    build_splits,
    derive_seed,
    discover_modelnet,
    format_off,
    load_clouds,
    load_off,
    normalize_unit_sphere,
    parse_off,
    rotate_z,
    sample_surface,
    save_clouds,
    subsample,
)

CUBE_OFF = """OFF
8 6 0
0 0 0
1 0 0
1 1 0
0 1 0
0 0 1
1 0 1
1 1 1
0 1 1
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 1 2 6 5
4 2 3 7 6
4 3 0 4 7
"""

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
clouds = arrays(np.float64, st.tuples(st.integers(1, 40), st.just(3)), elements=finite)


def square_mesh():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    return Mesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


# ------------------------------------------------------------------ parse


def test_cube_quads_fan_triangulated():
    mesh = parse_off(CUBE_OFF)
    assert mesh.vertices.shape == (8, 3)
    assert mesh.faces.shape == (12, 3)
    # fan around the first index of each quad
    assert mesh.faces[0].tolist() == [0, 3, 2]
    assert mesh.faces[1].tolist() == [0, 2, 1]
    assert mesh.face_areas().sum() == pytest.approx(6.0)


def test_single_triangle_identity():
    mesh = parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    assert mesh.faces.tolist() == [[0, 1, 2]]
    assert mesh.vertices[1].tolist() == [1.0, 0.0, 0.0]


def test_coff_header_rejected():
    with pytest.raises(MalformedHeader):
        parse_off(CUBE_OFF.replace("OFF", "COFF", 1))


def test_fused_modelnet_header_accepted():
    mesh = parse_off("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    assert len(mesh.faces) == 1


def test_comments_and_blank_lines_ignored():
    text = "# header comment\nOFF\n\n3 1 0\n0 0 0 # a vertex\n1 0 0\n0 1 0\n3 0 1 2\n"
    assert parse_off(io.StringIO(text)).faces.shape == (1, 3)


def test_count_mismatch():
    with pytest.raises(CountMismatch):
        parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n3 0 1 2\n")
    with pytest.raises(CountMismatch):
        parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n3 0 1 2\n")


def test_bad_index():
    with pytest.raises(BadIndex):
        parse_off("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 3\n")


def test_format_roundtrip():
    mesh = shapes.torus()
    back = parse_off(format_off(mesh))
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)


def test_load_off_and_discover(tmp_path):
    for cls in ("chair", "bed"):
        for split in ("train", "test"):
            d = tmp_path / cls / split
            d.mkdir(parents=True)
            (d / f"{cls}_0001.off").write_text(CUBE_OFF)
    classes, roster = discover_modelnet(tmp_path)
    assert classes == ["bed", "chair"]
    assert [r[:2] for r in roster][:2] == [("bed/test/bed_0001", 0), ("bed/train/bed_0001", 0)]
    mesh = load_off(roster[-1][2], 1)
    assert mesh.object_id == "chair_0001" and mesh.class_label == 1


def test_discover_empty(tmp_path):
    (tmp_path / "chair").mkdir()
    with pytest.raises(EmptyRoster):
        discover_modelnet(tmp_path)


# --------------------------------------------------------------- sampling


def test_samples_lie_on_triangle_plane():
    v = np.array([[0.3, -1.0, 2.0], [1.5, 0.2, 0.7], [-0.4, 0.9, 1.1]])
    mesh = Mesh(v, np.array([[0, 1, 2]]))
    cloud = sample_surface(mesh, 100, seed=3)
    normal = np.cross(v[1] - v[0], v[2] - v[0])
    normal /= np.linalg.norm(normal)
    assert cloud.n == 100
    assert np.abs((cloud.points - v[0]) @ normal).max() < 1e-9


def test_samples_inside_triangle():
    mesh = Mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], float), np.array([[0, 1, 2]]))
    p = sample_surface(mesh, 2000, seed=0).points
    assert (p[:, 0] >= 0).all() and (p[:, 1] >= 0).all() and (p[:, :2].sum(1) <= 1 + 1e-12).all()


@pytest.mark.parametrize("seed", [0, 1, 7, 12345])
def test_equal_area_split_within_three_sigma(seed):
    p = sample_surface(square_mesh(), 10000, seed).points
    # triangle 0 is below the diagonal y = x
    count = int((p[:, 1] < p[:, 0]).sum())
    sigma = math.sqrt(10000 * 0.5 * 0.5)
    assert abs(count - 5000) <= 3 * sigma


@pytest.mark.parametrize("ratio", [2.0, 5.0])
def test_area_weighting_chi_square(ratio):
    from scipy.stats import chisquare

    # two disjoint triangles with areas ratio : 1
    s = math.sqrt(ratio)
    v = np.array([[0, 0, 0], [s, 0, 0], [0, s, 0], [5, 0, 0], [6, 0, 0], [5, 1, 0]], float)
    mesh = Mesh(v, np.array([[0, 1, 2], [3, 4, 5]]))
    p = sample_surface(mesh, 10000, seed=11).points
    big = int((p[:, 0] < 4).sum())
    expected = 10000 * np.array([ratio / (1 + ratio), 1 / (1 + ratio)])
    assert chisquare([big, 10000 - big], expected).pvalue > 0.001


def test_sampling_deterministic_and_empty():
    m = shapes.cylinder()
    np.testing.assert_array_equal(sample_surface(m, 50, 4).points, sample_surface(m, 50, 4).points)
    assert sample_surface(m, 0, 4).n == 0


def test_degenerate_mesh():
    v = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2]], float)
    with pytest.raises(DegenerateMesh):
        sample_surface(Mesh(v, np.array([[0, 1, 2]])), 10, 0)


@pytest.mark.parametrize("kind", shapes.SHAPES)
def test_synthetic_shapes_are_valid(kind):
    mesh = shapes.random_shape(kind, np.random.default_rng(0))
    assert mesh.faces.min() >= 0 and mesh.faces.max() < len(mesh.vertices)
    assert mesh.face_areas().sum() > 0
    assert sample_surface(mesh, 64, 0).n == 64


# ---------------------------------------------------------- preprocessing


def test_normalize_examples():
    c = normalize_unit_sphere(PointCloud(np.array([[2.0, 0, 0], [4.0, 0, 0]])))
    np.testing.assert_allclose(c.points, [[-1, 0, 0], [1, 0, 0]])
    same = normalize_unit_sphere(PointCloud(np.full((5, 3), 3.5)))
    assert np.all(same.points == 0)
    unit = PointCloud(np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0.5, 0], [0, -0.5, 0]]))
    np.testing.assert_allclose(normalize_unit_sphere(unit).points, unit.points, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(clouds)
def test_normalize_invariants_and_idempotence(pts):
    once = normalize_unit_sphere(PointCloud(pts))
    norms = np.linalg.norm(once.points, axis=1)
    assert np.abs(once.points.mean(axis=0)).max() < 1e-6
    # zero-spread clouds collapse to the origin
    assert abs(norms.max() - 1) < 1e-6 or norms.max() < 1e-6
    twice = normalize_unit_sphere(once)
    np.testing.assert_allclose(twice.points, once.points, atol=1e-9)


def test_subsample_examples():
    c = PointCloud(np.arange(30, dtype=float).reshape(10, 3), label=2, object_id="x")
    full = subsample(c, 10, 0)
    assert sorted(map(tuple, full.points)) == sorted(map(tuple, c.points))
    one = subsample(c, 1, 5)
    assert any((one.points[0] == row).all() for row in c.points)
    assert one.label == 2 and one.object_id == "x"
    with pytest.raises(TooManyRequested):
        subsample(c, 11, 0)


@settings(max_examples=100, deadline=None)
@given(clouds, st.integers(0, 2**31), st.data())
def test_subsample_is_sub_multiset(pts, seed, data):
    m = data.draw(st.integers(1, len(pts)))
    out = subsample(PointCloud(pts), m, seed).points
    assert len(out) == m
    pool = [tuple(r) for r in pts]
    for r in map(tuple, out):
        pool.remove(r)  # raises if not present often enough
    np.testing.assert_array_equal(out, subsample(PointCloud(pts), m, seed).points)


def test_rotate_examples():
    c = PointCloud(np.array([[1.0, 0.0, 5.0]]))
    np.testing.assert_array_equal(rotate_z(c, 0.0).points, c.points)
    np.testing.assert_allclose(rotate_z(c, math.pi).points, [[-1.0, 0.0, 5.0]], atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (12, 3), elements=st.floats(-10, 10)), st.floats(-10, 10))
def test_rotation_is_isometry(pts, theta):
    r = rotate_z(PointCloud(pts), theta).points
    np.testing.assert_allclose(np.hypot(r[:, 0], r[:, 1]), np.hypot(pts[:, 0], pts[:, 1]), atol=1e-12)
    np.testing.assert_array_equal(r[:, 2], pts[:, 2])
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(r[:, None] - r[None], axis=-1)
    np.testing.assert_allclose(d1, d0, atol=1e-9)


# ----------------------------------------------------------------- splits


def roster(n):
    return [(f"obj{i:05d}", i % 10) for i in range(n)]


def test_modelnet_sized_split():
    s = build_splits(roster(4899), 0.8, seed=0)
    assert len(s.source_labelled) == 3919 and len(s.test) == 980
    sized = build_splits(roster(4899), 0.8, seed=0, sizes=(3991, 908))
    assert len(sized.source_labelled) == 3991 and len(sized.test) == 908


def test_split_fraction_one_and_determinism():
    assert build_splits(roster(50), 1.0, 3).test == []
    assert build_splits(roster(50), 0.8, 3) == build_splits(roster(50), 0.8, 3)
    assert build_splits(roster(50), 0.8, 3) != build_splits(roster(50), 0.8, 4)


def test_split_empty_roster():
    with pytest.raises(EmptyRoster):
        build_splits([], 0.8, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.floats(0.01, 1.0), st.integers(0, 2**31))
def test_split_properties(n, frac, seed):
    s = build_splits(roster(n), frac, seed)
    src = {oid for oid, _ in s.source_labelled}
    tst = {oid for oid, _ in s.test}
    assert not src & tst
    assert set(s.target_unlabelled) <= src
    assert len(src) + len(tst) == n
    assert len(src) == math.floor(frac * n)


# ------------------------------------------------------------------ cache


def test_cloud_cache_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    clouds_in = [
        PointCloud(rng.standard_normal((n, 3)), lab, f"id/{i}")
        for i, (n, lab) in enumerate([(5, 0), (1, None), (7, 3)])
    ]
    path = tmp_path / "c.npz"
    save_clouds(path, clouds_in)
    back = load_clouds(path)
    assert [c.object_id for c in back] == [c.object_id for c in clouds_in]
    assert [c.label for c in back] == [0, None, 3]
    for a, b in zip(back, clouds_in):
        assert a.points.tobytes() == b.points.tobytes()


def test_derive_seed_stable():
    assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
    assert derive_seed(1, "a", 2) != derive_seed(1, "b", 2)
    assert 0 <= derive_seed(0) < 2**63
