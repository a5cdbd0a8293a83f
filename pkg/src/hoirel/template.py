"""Procedural humanoid template mesh and parametric object surfaces.

The humanoid is a deformed sphere mesh with named vertex regions. Two
resolutions are provided: an icosphere (162 vertices at subdivision 2)
for desk-scale runs and a UV sphere sized to 6890 vertices for shape
checks at full resolution.
"""

import numpy as np
from scipy import sparse

from .geometry import TemplateMesh

HEIGHT = 1.7

# region anchors as unit directions on the undeformed sphere
_HAND_DIRS = {"right_hand": (1.0, 0.0, -0.05), "left_hand": (-1.0, 0.0, -0.05)}
_BACK_DIR = (0.0, 1.0, 0.15)


def icosphere(subdivisions=2):
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts), np.array(faces, dtype=np.int64)


def uv_sphere(rings, segments):
    """Closed sphere with ``rings * segments + 2`` vertices."""
    theta = np.pi * np.arange(1, rings + 1) / (rings + 1)
    phi = 2 * np.pi * np.arange(segments) / segments
    st, ct = np.sin(theta)[:, None], np.cos(theta)[:, None]
    ring_pts = np.stack([st * np.cos(phi), st * np.sin(phi), np.broadcast_to(ct, (rings, segments))], -1)
    verts = np.concatenate([[[0, 0, 1.0]], ring_pts.reshape(-1, 3), [[0, 0, -1.0]]])
    top, bottom = 0, len(verts) - 1

    def idx(r, s):
        return 1 + r * segments + (s % segments)

    faces = []
    for s in range(segments):
        faces.append((top, idx(0, s), idx(0, s + 1)))
        faces.append((bottom, idx(rings - 1, s + 1), idx(rings - 1, s)))
    for r in range(rings - 1):
        for s in range(segments):
            a, b = idx(r, s), idx(r, s + 1)
            c, d = idx(r + 1, s), idx(r + 1, s + 1)
            faces += [(a, c, b), (b, c, d)]
    return verts, np.array(faces, dtype=np.int64)


def _bump(dirs, anchor, width):
    a = np.asarray(anchor, dtype=np.float64)
    a = a / np.linalg.norm(a)
    return np.exp(-np.sum((dirs - a) ** 2, axis=1) / width)


def _deform(dirs):
    # ellipsoidal trunk with arm bulges at the lateral anchors
    r = 1.0 + sum(0.9 * _bump(dirs, d, 0.08) for d in _HAND_DIRS.values())
    p = dirs * r[:, None]
    p = p * np.array([0.2, 0.13, HEIGHT / 2])
    p[:, 2] += HEIGHT / 2
    return p


def farthest_point_order(points, n_out, start=0):
    pts = np.asarray(points, dtype=np.float64)
    chosen = np.empty(n_out, dtype=np.int64)
    chosen[0] = start
    d = np.linalg.norm(pts - pts[start], axis=1)
    for i in range(1, n_out):
        chosen[i] = int(np.argmax(d))
        d = np.minimum(d, np.linalg.norm(pts - pts[chosen[i]], axis=1))
    return chosen


def make_downsample_map(vertices, faces, n_out):
    """Row-stochastic map averaging each kept vertex with its 1-ring."""
    n = len(vertices)
    keep = np.sort(farthest_point_order(vertices, n_out))
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    adj = sparse.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    adj = ((adj + adj.T) > 0).astype(np.float64) + sparse.identity(n, format="csr")
    rows = adj[keep]
    rows = sparse.diags(1.0 / np.asarray(rows.sum(axis=1)).ravel()) @ rows
    return sparse.csr_matrix(rows)


def _regions(dirs):
    regions = {}
    for name, anchor in _HAND_DIRS.items():
        a = np.asarray(anchor) / np.linalg.norm(anchor)
        regions[name] = np.flatnonzero(dirs @ a > 0.9)
    regions["hand"] = np.union1d(regions["right_hand"], regions["left_hand"])
    b = np.asarray(_BACK_DIR) / np.linalg.norm(_BACK_DIR)
    regions["back"] = np.flatnonzero(dirs @ b > 0.85)
    regions["hip"] = np.flatnonzero((dirs[:, 2] > -0.5) & (dirs[:, 2] < -0.2))
    regions["seat"] = np.flatnonzero((dirs[:, 2] < -0.45) & (dirs[:, 2] > -0.8) & (dirs[:, 1] > 0.2))
    regions["foot"] = np.flatnonzero(dirs[:, 2] < -0.9)
    return regions


def humanoid_template(resolution="desk", n_sampled=None):
    """Humanoid template mesh.

    ``resolution="desk"`` gives 162 vertices sampled to 81; ``"paper"``
    gives 6890 vertices sampled to 1723.
    """
    if resolution == "desk":
        dirs, faces = icosphere(2)
        n_sampled = 81 if n_sampled is None else n_sampled
    elif resolution == "paper":
        dirs, faces = uv_sphere(84, 82)
        n_sampled = 1723 if n_sampled is None else n_sampled
    else:
        raise ValueError(f"unknown template resolution {resolution!r}")
    verts = _deform(dirs)
    regions = _regions(dirs)
    ds = make_downsample_map(verts, faces, n_sampled)
    hip = regions["hip"]
    pelvis = sparse.csr_matrix((np.full(len(hip), 1.0 / len(hip)), (np.zeros(len(hip), dtype=np.int64), hip)),
                               shape=(1, len(verts)))
    return TemplateMesh(verts, faces, ds, pelvis, regions)


# --- parametric objects ------------------------------------------------------
# Each generator returns (points, outward normals) in the object frame with the
# centroid of the sampled surface near the origin.

def sphere_cap(rng, n, radius, cap_height=None):
    """Spherical cap with the pole on -z; ``cap_height`` defaults to 1.5 R."""
    h = 1.5 * radius if cap_height is None else cap_height
    zmin = radius - h
    z = rng.uniform(zmin, radius, n)
    phi = rng.uniform(0, 2 * np.pi, n)
    s = np.sqrt(np.maximum(radius ** 2 - z ** 2, 0.0))
    pts = np.stack([s * np.cos(phi), s * np.sin(phi), z], 1)
    pts[:, 2] = -pts[:, 2]
    normals = pts / radius
    return pts, normals


def box(rng, n, size):
    size = np.asarray(size, dtype=np.float64)
    areas = np.array([size[1] * size[2], size[0] * size[2], size[0] * size[1]]).repeat(2)
    face = rng.choice(6, n, p=areas / areas.sum())
    pts = rng.uniform(-0.5, 0.5, (n, 3)) * size
    normals = np.zeros((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * size[axis] / 2
    normals[np.arange(n), axis] = sign
    return pts, normals


def cylinder(rng, n, radius, length, caps=True):
    side = 2 * np.pi * radius * length
    cap = np.pi * radius ** 2 if caps else 0.0
    kind = rng.choice(3, n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    phi = rng.uniform(0, 2 * np.pi, n)
    z = rng.uniform(-length / 2, length / 2, n)
    r = np.where(kind == 0, radius, radius * np.sqrt(rng.uniform(0, 1, n)))
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], 1)
    normals = np.stack([np.cos(phi), np.sin(phi), np.zeros(n)], 1)
    for k, s in ((1, 1.0), (2, -1.0)):
        m = kind == k
        pts[m, 2] = s * length / 2
        normals[m] = (0.0, 0.0, s)
    return pts, normals


def stick(rng, n, radius, length):
    return cylinder(rng, n, radius, length, caps=True)
