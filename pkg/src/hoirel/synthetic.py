"""Deterministic synthetic interaction samples.

A scenario pairs the humanoid template with a parametric object pressed
against a named body region. Ground truth follows from construction:
contact vertices lie within ``contact_radius`` of an object point, object
affordance decays exponentially with distance to the contact set, and the
center is the posed object centroid. Object points are stored in their own
centered frame; human vertices and the center are in the world frame seen
by a fixed orthographic camera looking along +y.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from . import template as tpl
from .data import ImageInput, InteractionSample, PointSet, PROXY_RADII
from .geometry import CurvatureField, downsample_vertices, normal_curvature

INTENTS = ("grasp", "hold", "carry", "sit", "ride", "lift")

DEFAULT_SCENARIOS = (
    {"name": "grasp-stick", "category": "Baseballbat", "shape": "stick",
     "params": {"radius": 0.035, "length": 0.8}, "site": "right_hand",
     "orientation": "tangent", "intent": "grasp"},
    {"name": "hold-mug", "category": "Mug", "shape": "sphere-cap",
     "params": {"radius": 0.094}, "site": "left_hand", "orientation": "free", "intent": "hold"},
    {"name": "carry-backpack", "category": "Backpack", "shape": "box",
     "params": {"size": [0.3, 0.14, 0.4]}, "site": "back", "orientation": "flat", "intent": "carry"},
    {"name": "sit-chair", "category": "Chair", "shape": "box",
     "params": {"size": [0.42, 0.4, 0.08]}, "site": "seat", "orientation": "flat", "intent": "sit"},
    {"name": "ride-skateboard", "category": "Skateboard", "shape": "box",
     "params": {"size": [0.22, 0.75, 0.03]}, "site": "foot", "orientation": "flat", "intent": "ride"},
    {"name": "lift-bowl", "category": "Bowl", "shape": "sphere-cap",
     "params": {"radius": 0.132}, "site": "right_hand", "orientation": "free", "intent": "lift"},
)


class ScenarioRejected(RuntimeError):
    pass


@dataclass
class GeneratorConfig:
    scenarios: list = field(default_factory=lambda: [dict(s) for s in DEFAULT_SCENARIOS])
    samples_per_scenario: int = 4
    template: str = "desk"
    n_object: int = 256
    image_side: int = 64
    contact_radius: float = 0.03
    affordance_core: float = 0.08
    affordance_falloff: float = 0.02
    curvature_k: int = 20
    min_contact: int = 3
    max_press: float = 0.12
    size_jitter: float = 0.1
    yaw_range_deg: float = 20.0
    max_attempts: int = 50

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**d)


def _object_surface(rng, shape, params, n):
    if shape == "sphere-cap":
        return tpl.sphere_cap(rng, n, params["radius"], params.get("cap_height"))
    if shape == "box":
        return tpl.box(rng, n, params["size"])
    if shape == "cylinder":
        return tpl.cylinder(rng, n, params["radius"], params["length"])
    if shape == "stick":
        return tpl.stick(rng, n, params["radius"], params["length"])
    raise ValueError(f"unknown object shape {shape!r}")


def _orientation(rng, mode, site_normal):
    if mode == "free":
        return Rotation.random(random_state=rng).as_matrix()
    if mode == "flat":
        return Rotation.from_euler("z", rng.uniform(-0.3, 0.3)).as_matrix()
    if mode == "tangent":
        # object z axis lies in the tangent plane at the site
        t = np.cross(site_normal, [0.0, 0.0, 1.0])
        if np.linalg.norm(t) < 1e-6:
            t = np.array([1.0, 0.0, 0.0])
        t /= np.linalg.norm(t)
        t = Rotation.from_rotvec(site_normal * rng.uniform(-0.4, 0.4)).apply(t)
        x = np.cross(t, site_normal)
        x /= np.linalg.norm(x)
        y = np.cross(t, x)
        return np.stack([x, y, t], axis=1)
    raise ValueError(f"unknown orientation mode {mode!r}")


def _min_dists(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)).min(axis=1)


def rasterize(human_verts, faces, human_normals, obj_pts, obj_color, side):
    """Orthographic front view (camera at -y) with amodal masks."""
    px = 2.0 / side
    image = np.full((side, side, 3), 0.1)
    depth = np.full((side, side), np.inf)
    hmask = np.zeros((side, side), dtype=np.uint8)
    omask = np.zeros((side, side), dtype=np.uint8)
    light = np.array([0.3, -1.0, 0.5])
    light /= np.linalg.norm(light)
    skin = np.array([0.9, 0.7, 0.6])

    uv = np.stack([(human_verts[:, 0] + 1.0) / px - 0.5, (1.95 - human_verts[:, 2]) / px - 0.5], 1)
    shade = 0.35 + 0.65 * np.clip(human_normals @ light, 0.0, 1.0)
    for f in faces:
        a, b, c = uv[f]
        lo = np.floor(np.minimum(np.minimum(a, b), c)).astype(int)
        hi = np.ceil(np.maximum(np.maximum(a, b), c)).astype(int)
        lo = np.clip(lo, 0, side - 1)
        hi = np.clip(hi, 0, side - 1)
        if np.any(hi < lo):
            continue
        jj, ii = np.meshgrid(np.arange(lo[0], hi[0] + 1), np.arange(lo[1], hi[1] + 1))
        p = np.stack([jj.ravel(), ii.ravel()], 1).astype(np.float64)
        m = np.array([b - a, c - a]).T
        det = np.linalg.det(m)
        if abs(det) < 1e-12:
            continue
        w = np.linalg.solve(m, (p - a).T).T
        inside = (w[:, 0] >= 0) & (w[:, 1] >= 0) & (w.sum(1) <= 1)
        if not inside.any():
            continue
        jj, ii, w = jj.ravel()[inside], ii.ravel()[inside], w[inside]
        bary = np.stack([1 - w.sum(1), w[:, 0], w[:, 1]], 1)
        d = bary @ human_verts[f, 1]
        s = bary @ shade[f]
        hmask[ii, jj] = 1
        nearer = d < depth[ii, jj]
        ii, jj = ii[nearer], jj[nearer]
        depth[ii, jj] = d[nearer]
        image[ii, jj] = skin * s[nearer, None]

    ou = np.rint((obj_pts[:, 0] + 1.0) / px - 0.5).astype(int)
    ov = np.rint((1.95 - obj_pts[:, 2]) / px - 0.5).astype(int)
    for du in (-1, 0, 1):
        for dv in (-1, 0, 1):
            j, i = ou + du, ov + dv
            ok = (j >= 0) & (j < side) & (i >= 0) & (i < side)
            j, i, d = j[ok], i[ok], obj_pts[ok, 1]
            omask[i, j] = 1
            nearer = d < depth[i, j]
            depth[i[nearer], j[nearer]] = d[nearer]
            image[i[nearer], j[nearer]] = obj_color
    return ImageInput(image.astype(np.float32), hmask, omask)


def _category_color(category):
    names = sorted(PROXY_RADII)
    h = names.index(category) / len(names)
    return np.array([0.5 + 0.5 * np.cos(2 * np.pi * h), 0.5 + 0.5 * np.cos(2 * np.pi * (h - 1 / 3)),
                     0.5 + 0.5 * np.cos(2 * np.pi * (h - 2 / 3))])


def labels_consistent(posed, contact_vertices, heat, contact_radius):
    """Every contact vertex lies within ``contact_radius`` of an object point with heat > 0.5."""
    hot = posed[heat > 0.5]
    if len(contact_vertices) == 0:
        return True
    if len(hot) == 0:
        return False
    return bool(np.all(_min_dists(contact_vertices, hot) <= contact_radius))


def generate_sample(cfg, scenario, mesh, seed, index, intents=INTENTS):
    rng = np.random.default_rng([seed, index])
    region = np.asarray(mesh.regions[scenario["site"]])
    for _ in range(cfg.max_attempts):
        yaw = np.deg2rad(rng.uniform(-cfg.yaw_range_deg, cfg.yaw_range_deg))
        rot_h = Rotation.from_euler("z", yaw).as_matrix()
        shift = np.array([rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0])
        verts = mesh.vertices @ rot_h.T + shift
        vnorm = mesh.vertex_normals(verts)

        params = dict(scenario["params"])
        scale = 1.0 + rng.uniform(-cfg.size_jitter, cfg.size_jitter)
        for key in ("radius", "length"):
            if key in params:
                params[key] = params[key] * scale
        if "size" in params:
            params["size"] = list(np.asarray(params["size"]) * scale)
        pts, nrm = _object_surface(rng, scenario["shape"], params, cfg.n_object)
        pts = pts - pts.mean(axis=0)

        site = int(rng.choice(region))
        n_site = vnorm[site]
        rot_o = _orientation(rng, scenario["orientation"], n_site)
        local = pts @ rot_o.T
        support = (local @ -n_site).max()
        # press deeper until enough vertices touch, never leaving the region
        contact = posed = None
        for press in np.arange(0.0, cfg.max_press + 1e-9, 0.01):
            center = verts[site] + n_site * (support - press)
            trial = local + center
            hits = np.flatnonzero(_min_dists(verts, trial) <= cfg.contact_radius)
            if not np.isin(hits, region).all():
                break
            if hits.size:
                contact, posed = hits, trial
                if hits.size >= cfg.min_contact:
                    break
        if contact is None:
            continue
        break
    else:
        raise ScenarioRejected(f"scenario {scenario['name']!r} produced no valid contact "
                               f"in {cfg.max_attempts} attempts")

    contact_gt = np.zeros(len(verts), dtype=np.uint8)
    contact_gt[contact] = 1
    # full heat near the contact vertices, exponential falloff beyond
    core = max(cfg.affordance_core, cfg.contact_radius)
    gap = np.maximum(_min_dists(posed, verts[contact]) - core, 0.0)
    heat = np.exp(-gap / cfg.affordance_falloff)
    if not labels_consistent(posed, verts[contact], heat, cfg.contact_radius):
        raise RuntimeError(f"inconsistent contact/affordance labels for {scenario['name']!r}")

    image = rasterize(verts, mesh.faces, vnorm, posed, _category_color(scenario["category"]), cfg.image_side)

    obj_pts = pts.astype(np.float32)
    obj_nrm = nrm.astype(np.float64)
    obj_nrm = (obj_nrm / np.linalg.norm(obj_nrm, axis=1, keepdims=True)).astype(np.float32)
    verts32 = verts.astype(np.float32)
    sampled32 = downsample_vertices(mesh, verts32).astype(np.float32)
    s_nrm = np.asarray(mesh.downsample_map @ mesh.vertex_normals(verts32.astype(np.float64)))
    s_nrm /= np.linalg.norm(s_nrm, axis=1, keepdims=True)

    k = cfg.curvature_k
    c_obj = normal_curvature(obj_pts.astype(np.float64), k, obj_nrm.astype(np.float64))
    c_hum = normal_curvature(sampled32.astype(np.float64), min(k, len(sampled32) - 1), s_nrm)

    return InteractionSample(
        id=f"{scenario['name']}-{index:05d}",
        image=image,
        object_points=PointSet(obj_pts, obj_nrm),
        human_vertices_full=verts32,
        human_vertices_sampled=sampled32,
        object_curvature=CurvatureField(c_obj.values.astype(np.float32), k),
        human_curvature=CurvatureField(c_hum.values.astype(np.float32), c_hum.k),
        contact_gt=contact_gt,
        affordance_gt=heat.astype(np.float32),
        center_gt=posed.mean(axis=0).astype(np.float32),
        intent_class=intents.index(scenario["intent"]),
        object_category=scenario["category"],
        scenario=scenario["name"],
    ).validate()


def generate_synthetic(cfg=None, seed=0, mesh=None):
    """All samples for ``cfg``, in scenario order, deterministic in ``seed``."""
    cfg = cfg or GeneratorConfig()
    if isinstance(cfg, dict):
        cfg = GeneratorConfig.from_dict(cfg)
    if not cfg.scenarios:
        raise ValueError("generator config names no scenarios")
    mesh = mesh or tpl.humanoid_template(cfg.template)
    out = []
    index = 0
    for scenario in cfg.scenarios:
        for _ in range(scenario.get("count", cfg.samples_per_scenario)):
            out.append(generate_sample(cfg, scenario, mesh, seed, index))
            index += 1
    return out
