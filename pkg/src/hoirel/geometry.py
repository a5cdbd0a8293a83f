"""Point-cloud and mesh numerics.

k-NN graphs, normal estimation, osculating-circle normal curvature,
template-mesh downsampling, edge-graph geodesics and pelvis extraction.
All functions are pure and work on numpy arrays.
"""

from dataclasses import dataclass, field
import struct

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph


class GeometryError(ValueError):
    pass


@dataclass
class PointSet:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise GeometryError(f"points must be N x 3, got {self.points.shape}")
        if len(self.points) < 4:
            raise GeometryError(f"need at least 4 points, got {len(self.points)}")
        if not np.all(np.isfinite(self.points)):
            raise GeometryError("points contain non-finite coordinates")
        if self.normals is not None:
            self.normals = np.asarray(self.normals)
            if self.normals.shape != self.points.shape:
                raise GeometryError("normals must match points in shape")
            norms = np.linalg.norm(self.normals.astype(np.float64), axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise GeometryError("normals must be unit length")

    def __len__(self):
        return len(self.points)


@dataclass
class LocalFrame:
    origin: np.ndarray
    x_axis: np.ndarray
    y_axis: np.ndarray
    normal: np.ndarray


@dataclass
class CurvatureField:
    values: np.ndarray
    k: int
    flagged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.values)


def _pairwise_sq_dists(a, b):
    # per-pair difference (no matmul expansion) so results do not depend on row order
    return ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)


def knn_graph(points, k, chunk=512):
    """Indices of the ``k`` nearest neighbours of every point (self excluded).

    Rows are sorted by ascending distance; equal distances resolve to the
    lower index.
    """
    pts = np.asarray(points.points if isinstance(points, PointSet) else points, dtype=np.float64)
    n = len(pts)
    if k < 1 or k >= n:
        raise GeometryError(f"k must satisfy 1 <= k < N (k={k}, N={n})")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("points contain non-finite coordinates")
    out = np.empty((n, k), dtype=np.int64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d = _pairwise_sq_dists(pts[start:stop], pts)
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        order = np.argsort(d, axis=1, kind="stable")
        out[start:stop] = order[:, :k]
    return out


def local_frame(origin, normal):
    """Orthonormal frame at ``origin`` with X from Gram-Schmidt of +x (fallback +y)."""
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    x = np.array([1.0, 0.0, 0.0]) - normal[0] * normal
    if np.linalg.norm(x) < 1e-6:
        x = np.array([0.0, 1.0, 0.0]) - normal[1] * normal
    x = x / np.linalg.norm(x)
    y = np.cross(normal, x)
    return LocalFrame(np.asarray(origin, dtype=np.float64), x, y, normal)


def _frames(normals):
    n = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    ex = np.array([1.0, 0.0, 0.0])
    ey = np.array([0.0, 1.0, 0.0])
    x = ex[None] - n[:, :1] * n
    xn = np.linalg.norm(x, axis=1)
    par = xn < 1e-6
    if np.any(par):
        x[par] = ey[None] - n[par, 1:2] * n[par]
        xn[par] = np.linalg.norm(x[par], axis=1)
    x = x / xn[:, None]
    y = np.cross(n, x)
    return x, y, n


def estimate_normals(points, k=20):
    """PCA normals oriented by propagation over a minimum spanning tree.

    Returns ``(PointSet with normals, degenerate indices)``. The tree is the
    Euclidean-weighted MST of the symmetrised k-NN graph, rooted in each
    connected component at its highest-z point, whose normal is turned to
    point up (or away from the centroid when horizontal).
    """
    if k < 3:
        raise GeometryError("normal estimation needs k >= 3")
    pts = np.asarray(points.points if isinstance(points, PointSet) else points, dtype=np.float64)
    n = len(pts)
    k = min(k, n - 1)
    nbr = knn_graph(pts, k)
    hood = pts[np.concatenate([np.arange(n)[:, None], nbr], axis=1)]
    centered = hood - hood.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / hood.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    scale = np.maximum(evals[:, 2], 1e-300)
    degenerate = np.flatnonzero(evals[:, 1] <= 1e-10 * scale)
    normals[degenerate] = (0.0, 0.0, 1.0)

    rows = np.repeat(np.arange(n), k)
    cols = nbr.ravel()
    w = np.linalg.norm(pts[rows] - pts[cols], axis=1)
    # zero-length edges would vanish from the sparse graph
    w = np.maximum(w, 1e-12)
    graph = sparse.coo_matrix((w, (rows, cols)), shape=(n, n)).tocsr()
    graph = graph.maximum(graph.T)
    mst = csgraph.minimum_spanning_tree(graph)
    mst = mst + mst.T
    n_comp, labels = csgraph.connected_components(mst, directed=False)
    centroid = pts.mean(axis=0)
    for c in range(n_comp):
        members = np.flatnonzero(labels == c)
        root = members[np.argmax(pts[members, 2])]
        ref = normals[root, 2]
        if abs(ref) < 1e-12:
            ref = normals[root] @ (pts[root] - centroid)
        if ref < 0:
            normals[root] = -normals[root]
        order, pred = csgraph.breadth_first_order(mst, root, directed=False)
        for node in order[1:]:
            if normals[node] @ normals[pred[node]] < 0:
                normals[node] = -normals[node]
    return PointSet(pts, normals), degenerate


def normal_curvature(points, k=20, normals=None):
    """Mean osculating-circle normal curvature over each point's k neighbours.

    For neighbour m with normal M expressed in the local frame of p,
    ``C = -n_xy / (sqrt(n_xy**2 + n_z**2) * sqrt(x**2 + y**2))`` with
    ``n_xy = (x*M_x + y*M_y) / sqrt(x**2 + y**2)``. Under this sign
    convention a convex surface with outward normals gives negative values
    (a radius-R sphere yields -1/R).
    """
    if isinstance(points, PointSet):
        pts, nrm = points.points, points.normals if normals is None else normals
    else:
        pts, nrm = points, normals
    if nrm is None:
        raise GeometryError("normal_curvature requires normals")
    if k < 3:
        raise GeometryError("curvature needs k >= 3")
    pts = np.asarray(pts, dtype=np.float64)
    nrm = np.asarray(nrm, dtype=np.float64)
    nbr = knn_graph(pts, min(k, len(pts) - 1))
    ax_x, ax_y, ax_n = _frames(nrm)

    d = pts[nbr] - pts[:, None, :]
    m = nrm[nbr]
    x = np.einsum("nkc,nc->nk", d, ax_x)
    y = np.einsum("nkc,nc->nk", d, ax_y)
    mx = np.einsum("nkc,nc->nk", m, ax_x)
    my = np.einsum("nkc,nc->nk", m, ax_y)
    mz = np.einsum("nkc,nc->nk", m, ax_n)

    rho2 = x * x + y * y
    valid = rho2 >= 1e-12
    rho = np.sqrt(np.where(valid, rho2, 1.0))
    n_xy = (x * mx + y * my) / rho
    denom = np.sqrt(n_xy * n_xy + mz * mz)
    valid &= denom > 1e-12
    c = np.where(valid, -n_xy / (np.where(valid, denom, 1.0) * rho), 0.0)
    counts = valid.sum(axis=1)
    values = c.sum(axis=1) / np.maximum(counts, 1)
    flagged = np.flatnonzero(counts == 0)
    return CurvatureField(values, k, flagged)


# --- template mesh -----------------------------------------------------------


@dataclass
class TemplateMesh:
    vertices: np.ndarray
    faces: np.ndarray
    downsample_map: sparse.csr_matrix
    pelvis_weights: sparse.csr_matrix
    regions: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        v = len(self.vertices)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= v):
            raise GeometryError("face index out of range")
        self.downsample_map = sparse.csr_matrix(self.downsample_map)
        if self.downsample_map.shape[1] != v:
            raise GeometryError("downsample map columns must equal vertex count")
        rows = np.asarray(self.downsample_map.sum(axis=1)).ravel()
        if np.any(np.abs(rows - 1.0) > 1e-6):
            raise GeometryError("downsample map rows must sum to 1")
        self.pelvis_weights = sparse.csr_matrix(self.pelvis_weights).reshape(1, v)
        if abs(self.pelvis_weights.sum() - 1.0) > 1e-6:
            raise GeometryError("pelvis weights must sum to 1")
        n_comp, _ = csgraph.connected_components(self.edge_graph(), directed=False)
        if n_comp != 1:
            raise GeometryError(f"mesh edge graph has {n_comp} components")

    @property
    def n_full(self):
        return len(self.vertices)

    @property
    def n_sampled(self):
        return self.downsample_map.shape[0]

    def edges(self):
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def edge_graph(self, vertices=None):
        verts = self.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
        e = self.edges()
        w = np.linalg.norm(verts[e[:, 0]] - verts[e[:, 1]], axis=1)
        n = len(verts)
        g = sparse.coo_matrix((w, (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
        return g.maximum(g.T)

    def vertex_normals(self, vertices=None):
        verts = self.vertices if vertices is None else np.asarray(vertices, dtype=np.float64)
        f = self.faces
        fn = np.cross(verts[f[:, 1]] - verts[f[:, 0]], verts[f[:, 2]] - verts[f[:, 0]])
        vn = np.zeros_like(verts)
        for i in range(3):
            np.add.at(vn, f[:, i], fn)
        return vn / np.linalg.norm(vn, axis=1, keepdims=True)


def downsample_vertices(mesh, full_vertices):
    full_vertices = np.asarray(full_vertices)
    if full_vertices.ndim != 2 or full_vertices.shape[0] != mesh.n_full:
        raise GeometryError(
            f"expected {mesh.n_full} x 3 vertices, got {full_vertices.shape}")
    return np.asarray(mesh.downsample_map @ full_vertices.astype(np.float64))


def geodesic_nearest(mesh, sources, queries=None, vertices=None):
    """Shortest edge-graph distance from each query vertex to the source set."""
    sources = np.unique(np.asarray(sources, dtype=np.int64))
    if sources.size == 0:
        raise GeometryError("geodesic_nearest needs a non-empty source set")
    n = mesh.n_full
    if sources.min() < 0 or sources.max() >= n:
        raise GeometryError("source index out of range")
    dist = csgraph.dijkstra(mesh.edge_graph(vertices), directed=False,
                            indices=sources, min_only=True)
    if queries is None:
        return dist
    queries = np.asarray(queries, dtype=np.int64)
    if queries.size and (queries.min() < 0 or queries.max() >= n):
        raise GeometryError("query index out of range")
    return dist[queries]


def pelvis_position(mesh, vertices):
    vertices = np.asarray(vertices)
    if vertices.ndim != 2 or vertices.shape[0] != mesh.n_full:
        raise GeometryError(f"expected {mesh.n_full} x 3 vertices, got {vertices.shape}")
    return np.asarray(mesh.pelvis_weights @ vertices.astype(np.float64)).ravel()


# --- curvature cache ---------------------------------------------------------

CURVATURE_MAGIC = b"LMCV0001"


def write_curvature_cache(path, values):
    values = np.asarray(values, dtype="<f4").ravel()
    with open(path, "wb") as fh:
        fh.write(CURVATURE_MAGIC)
        fh.write(struct.pack("<I", len(values)))
        fh.write(values.tobytes())


def read_curvature_cache(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != CURVATURE_MAGIC:
        raise GeometryError(f"{path}: bad curvature cache magic {raw[:8]!r}")
    if len(raw) < 12:
        raise GeometryError(f"{path}: truncated header")
    (n,) = struct.unpack("<I", raw[8:12])
    if len(raw) != 12 + 4 * n:
        raise GeometryError(f"{path}: expected {12 + 4 * n} bytes, found {len(raw)}")
    return np.frombuffer(raw[12:], dtype="<f4").copy()
