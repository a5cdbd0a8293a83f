import numpy as np
import pytest
from scipy import sparse

from hoirel.geometry import TemplateMesh
from hoirel.synthetic import generate_synthetic
from hoirel.template import humanoid_template


def chain_mesh(n, spacing=1.0):
    """Vertices on the x axis joined by degenerate triangles: a path graph."""
    verts = np.zeros((n, 3))
    verts[:, 0] = np.arange(n) * spacing
    faces = np.array([[i, i + 1, i + 1] for i in range(n - 1)])
    return TemplateMesh(verts, faces, sparse.identity(n, format="csr"),
                        sparse.csr_matrix(np.full((1, n), 1.0 / n)))


def grid_mesh(side=10, seed=0, jitter=0.2):
    """Triangulated jittered side x side grid (side**2 vertices)."""
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.arange(side, dtype=float), np.arange(side, dtype=float), indexing="ij")
    verts = np.stack([u.ravel(), v.ravel(), np.zeros(side * side)], axis=1)
    verts += rng.uniform(-jitter, jitter, verts.shape)
    faces = []
    for i in range(side - 1):
        for j in range(side - 1):
            a, b, c, d = i * side + j, i * side + j + 1, (i + 1) * side + j, (i + 1) * side + j + 1
            faces += [[a, b, d], [a, d, c]]
    n = side * side
    return TemplateMesh(verts, np.array(faces), sparse.identity(n, format="csr"),
                        sparse.csr_matrix(np.full((1, n), 1.0 / n)))


def floyd_warshall(mesh):
    n = mesh.n_full
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    for a, b in mesh.edges():
        if a != b:
            w = np.linalg.norm(mesh.vertices[a] - mesh.vertices[b])
            d[a, b] = d[b, a] = min(d[a, b], w)
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


def sphere_points(n, radius=1.0, seed=0):
    """Fibonacci-lattice points on a sphere with outward normals."""
    i = np.arange(n) + 0.5
    z = 1 - 2 * i / n
    r = np.sqrt(1 - z * z)
    t = np.pi * (1 + 5 ** 0.5) * i
    nrm = np.stack([r * np.cos(t), r * np.sin(t), z], axis=1)
    return nrm * radius, nrm


@pytest.fixture(scope="session")
def desk_mesh():
    return humanoid_template("desk")


@pytest.fixture(scope="session")
def samples(desk_mesh):
    return generate_synthetic(seed=0, mesh=desk_mesh)


# --- acceptance reporting ------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """``report(n, ok, detail)`` prints and records one pass/fail line."""
    def report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[n] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
