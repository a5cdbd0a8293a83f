import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from conftest import chain_mesh, floyd_warshall, grid_mesh, sphere_points
from hoirel.geometry import (
    GeometryError, PointSet, TemplateMesh, downsample_vertices, estimate_normals, geodesic_nearest,
    knn_graph, local_frame, normal_curvature, pelvis_position, read_curvature_cache,
    write_curvature_cache,
)


def brute_knn(pts, k):
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    out = []
    for i in range(len(pts)):
        order = sorted((d[i, j], j) for j in range(len(pts)) if j != i)
        out.append([j for _, j in order[:k]])
    return np.array(out)


def plane_points(n=400, seed=0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-1, 1, (n, 2))
    return np.column_stack([xy, np.zeros(n)])


# --- knn ---------------------------------------------------------------------

def test_knn_square_corners():
    sq = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
    nbr = knn_graph(sq, 2)
    for i, row in enumerate(nbr):
        assert set(row) == {(i + 1) % 4, (i - 1) % 4}


def test_knn_k1_is_nearest():
    pts = np.random.default_rng(1).normal(size=(30, 3))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    assert np.array_equal(knn_graph(pts, 1)[:, 0], d.argmin(1))


def test_knn_matches_brute_force():
    pts = np.random.default_rng(2).normal(size=(100, 3))
    assert np.array_equal(knn_graph(pts, 5), brute_knn(pts, 5))


def test_knn_tie_break_lower_index():
    pts = np.array([[0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [5, 5, 5]], float)
    assert list(knn_graph(pts, 3)[0]) == [1, 2, 3]


def test_knn_rejects_large_k():
    with pytest.raises(GeometryError):
        knn_graph(np.zeros((5, 3)) + np.arange(5)[:, None], 5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_knn_permutation_equivariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(40, 3))
    perm = rng.permutation(40)
    inv = np.argsort(perm)
    a = knn_graph(pts, 6)
    b = knn_graph(pts[perm], 6)
    assert np.array_equal(perm[b], a[perm])
    assert np.array_equal(inv[perm], np.arange(40))


# --- frames and normals --------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 1e-3))
def test_local_frame_orthonormal(n):
    f = local_frame(np.zeros(3), n)
    axes = np.stack([f.x_axis, f.y_axis, f.normal])
    assert np.allclose(axes @ axes.T, np.eye(3), atol=1e-6)


def test_local_frame_fallback_when_normal_is_x():
    f = local_frame(np.zeros(3), [1, 0, 0])
    assert np.allclose(f.x_axis, [0, 1, 0])


def test_plane_normals():
    ps, deg = estimate_normals(plane_points(), k=20)
    assert deg.size == 0
    assert np.all(np.abs(np.abs(ps.normals[:, 2]) - 1) < 1e-3)
    assert np.all(np.sign(ps.normals[:, 2]) == np.sign(ps.normals[0, 2]))


def test_sphere_normals_radial():
    pts, radial = sphere_points(2048)
    ps, _ = estimate_normals(pts, k=20)
    cosang = np.clip(np.abs((ps.normals * radial).sum(1)), -1, 1)
    assert np.degrees(np.arccos(cosang)).mean() < 3.0
    # orientation is consistent: all outward or all inward
    s = np.sign((ps.normals * radial).sum(1))
    assert abs(s.sum()) == len(s)


def test_collinear_neighbourhood_flagged():
    line = np.column_stack([np.arange(8.0), np.zeros(8), np.zeros(8)])
    ps, deg = estimate_normals(line, k=4)
    assert deg.size == 8
    assert np.allclose(ps.normals, [0, 0, 1])


def test_normals_need_k3():
    with pytest.raises(GeometryError):
        estimate_normals(plane_points(), k=2)


# --- curvature -----------------------------------------------------------------

def test_sphere_curvature_magnitude():
    for radius in (1.0, 0.25):
        pts, nrm = sphere_points(2048, radius)
        c = normal_curvature(PointSet(pts, nrm), k=20).values
        assert abs(np.abs(c).mean() - 1 / radius) < 0.1 / radius


def test_sphere_curvature_sign_convention():
    pts, nrm = sphere_points(512)
    assert np.all(normal_curvature(pts, normals=nrm).values < 0)
    assert np.all(normal_curvature(pts, normals=-nrm).values > 0)


def test_plane_curvature_zero():
    pts = plane_points()
    nrm = np.tile([0.0, 0.0, 1.0], (len(pts), 1))
    c = normal_curvature(pts, k=20, normals=nrm).values
    interior = np.all(np.abs(pts[:, :2]) < 0.8, axis=1)
    assert np.all(np.abs(c[interior]) < 0.05)


def test_cylinder_curvature():
    r = 0.5
    n = 2048
    i = np.arange(n)
    theta = 2 * np.pi * ((i * 0.618034) % 1.0)
    z = (i + 0.5) / n * 4.0
    nrm = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n)])
    pts = np.column_stack([r * nrm[:, :2], z])
    c = np.abs(normal_curvature(pts, k=20, normals=nrm).values)
    interior = (z > 0.5) & (z < 3.5)
    assert np.all(c[interior] <= 1 / r + 1e-9)
    assert abs(c[interior].mean() - 1 / (2 * r)) < 0.25 / (2 * r)


def test_curvature_rotation_invariant():
    pts, nrm = sphere_points(600)
    pts = pts * np.array([1.0, 0.7, 0.5])
    ps, _ = estimate_normals(pts, k=12)
    q, _ = np.linalg.qr(np.random.default_rng(3).normal(size=(3, 3)))
    a = normal_curvature(ps.points, 12, ps.normals).values
    b = normal_curvature(ps.points @ q.T, 12, ps.normals @ q.T).values
    assert np.allclose(a, b, atol=1e-6)


def test_curvature_scales_inversely():
    pts, nrm = sphere_points(2048)
    a = normal_curvature(pts, 20, nrm).values.mean()
    b = normal_curvature(pts * 3.0, 20, nrm).values.mean()
    assert abs(b * 3.0 - a) < 0.05 * abs(a)


def test_curvature_skips_tangent_neighbours():
    # every neighbour lies straight along the normal: all skipped, value 0 and flagged
    pts = np.column_stack([np.zeros(6), np.zeros(6), np.arange(6.0)])
    nrm = np.tile([0.0, 0.0, 1.0], (6, 1))
    f = normal_curvature(pts, k=3, normals=nrm)
    assert np.all(f.values == 0) and len(f.flagged) == 6


def test_curvature_requires_normals():
    with pytest.raises(GeometryError):
        normal_curvature(plane_points())


def test_curvature_cache_roundtrip(tmp_path):
    v = np.random.default_rng(0).normal(size=37).astype(np.float32)
    p = tmp_path / "c.bin"
    write_curvature_cache(p, v)
    raw = p.read_bytes()
    assert raw[:8] == b"LMCV0001" and int.from_bytes(raw[8:12], "little") == 37
    assert np.array_equal(read_curvature_cache(p), v)
    p.write_bytes(raw[:-2])
    with pytest.raises(GeometryError):
        read_curvature_cache(p)


# --- mesh operations -------------------------------------------------------------

def test_downsample_identity_and_constant():
    mesh = grid_mesh(5)
    x = np.random.default_rng(0).normal(size=(25, 3))
    assert np.array_equal(downsample_vertices(mesh, x), x)
    pairs = sparse.csr_matrix(np.kron(np.eye(12), [0.5, 0.5]))
    pairs = sparse.hstack([pairs, sparse.csr_matrix((12, 1))]).tocsr()
    m2 = TemplateMesh(mesh.vertices, mesh.faces, pairs, mesh.pelvis_weights)
    c = np.tile([0.3, -1.0, 2.0], (25, 1))
    assert np.allclose(downsample_vertices(m2, c), c[:12], atol=1e-12)


def test_downsample_matches_dense_and_is_affine():
    rng = np.random.default_rng(4)
    w = rng.uniform(size=(20, 50)) * (rng.uniform(size=(20, 50)) < 0.2)
    w[:, 0] += 1e-3
    w /= w.sum(1, keepdims=True)
    base = grid_mesh(10)
    verts = np.vstack([base.vertices[:50]])
    faces = np.array([f for f in base.faces if f.max() < 50])
    mesh = TemplateMesh(verts, faces, sparse.csr_matrix(w), sparse.csr_matrix(np.full((1, 50), 0.02)))
    x = rng.normal(size=(50, 3))
    assert np.allclose(downsample_vertices(mesh, x), w @ x, atol=1e-9)
    a, b = rng.normal(size=(3, 3)), rng.normal(size=3)
    assert np.allclose(downsample_vertices(mesh, x @ a.T + b), downsample_vertices(mesh, x) @ a.T + b, atol=1e-9)
    with pytest.raises(GeometryError):
        downsample_vertices(mesh, x[:49])


def test_geodesic_chain():
    mesh = chain_mesh(4)
    assert geodesic_nearest(mesh, [0], [3])[0] == 3.0
    assert geodesic_nearest(mesh, [1, 2], [2])[0] == 0.0


def test_geodesic_matches_floyd_warshall():
    mesh = grid_mesh(10, seed=5)
    d = floyd_warshall(mesh)
    rng = np.random.default_rng(6)
    for _ in range(10):
        src = rng.choice(100, size=rng.integers(1, 8), replace=False)
        got = geodesic_nearest(mesh, src)
        assert np.allclose(got, d[:, src].min(1), atol=1e-9)


def test_geodesic_triangle_and_symmetry():
    mesh = grid_mesh(6, seed=2)
    d = np.array([geodesic_nearest(mesh, [i]) for i in range(36)])
    assert np.allclose(d, d.T, atol=1e-12)
    assert np.all(d[:, :, None] <= d[:, None, :] + d.T[None, :, :] + 1e-12)


def test_geodesic_empty_sources():
    with pytest.raises(GeometryError):
        geodesic_nearest(chain_mesh(3), [])


def test_pelvis_weights():
    base = grid_mesh(4)
    x = np.random.default_rng(7).normal(size=(16, 3))
    onehot = np.zeros((1, 16))
    onehot[0, 5] = 1
    m = TemplateMesh(base.vertices, base.faces, base.downsample_map, sparse.csr_matrix(onehot))
    assert np.array_equal(pelvis_position(m, x), x[5])
    assert np.allclose(pelvis_position(base, x), x.mean(0))
    w = np.random.default_rng(8).uniform(size=16) * (np.arange(16) % 3 == 0)
    w /= w.sum()
    m = TemplateMesh(base.vertices, base.faces, base.downsample_map, sparse.csr_matrix(w))
    assert np.allclose(pelvis_position(m, x), w @ x, atol=1e-9)
    with pytest.raises(GeometryError):
        pelvis_position(m, x[:3])


def test_template_invariants(desk_mesh):
    rows = np.asarray(desk_mesh.downsample_map.sum(1)).ravel()
    assert np.allclose(rows, 1, atol=1e-6)
    assert (desk_mesh.n_full, desk_mesh.n_sampled) == (162, 81)
    assert {"hand", "hip", "back", "foot"} <= set(desk_mesh.regions)


def test_mesh_rejects_disconnected():
    with pytest.raises(GeometryError):
        TemplateMesh(np.eye(4), np.array([[0, 1, 1]]), sparse.identity(4), sparse.csr_matrix(np.full((1, 4), .25)))


def test_pointset_validation():
    with pytest.raises(GeometryError):
        PointSet(np.zeros((3, 3)))
    with pytest.raises(GeometryError):
        PointSet(np.full((4, 3), np.nan))
    with pytest.raises(GeometryError):
        PointSet(np.eye(4)[:, :3], np.ones((4, 3)))
