"""Sample schema, on-disk format, proxy radii and dataset splitting.

Each sample lives in its own directory holding ``manifest.json`` and one
binary blob per array. A blob is::

    b"LMTN0001" | dtype tag (u8) | rank (u32) | dims (u32 * rank) | payload

all little-endian; payload is float32 (tag 0) or uint8 (tag 1).
"""

from dataclasses import dataclass
import json
import logging
import os
import struct
from typing import Protocol

import numpy as np

from .geometry import CurvatureField, PointSet

log = logging.getLogger(__name__)

BLOB_MAGIC = b"LMTN0001"
_TAGS = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_TAG_OF = {"float32": 0, "uint8": 1}

PROXY_RADII = {
    "Backpack": 0.265, "Bottle": 0.140, "Mug": 0.094,
    "Baseballbat": 0.325, "Suitcase": 0.332, "Vase": 0.197,
    "Skateboard": 0.375, "Bicycle": 0.675, "Bowl": 0.132,
    "Tennisracket": 0.298, "Scissors": 0.179, "Chair": 0.455,
    "Surfboard": 0.687, "Keyboard": 0.217, "Knife": 0.173,
    "Motorcycle": 0.710, "Earphone": 0.132, "Bag": 0.192,
    "Umbrella": 0.372, "Guitar": 0.394, "Bed": 1.154,
}


class ParseError(ValueError):
    """Corrupt or inconsistent file in a sample directory."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


class SampleError(ValueError):
    pass


def radius_for(category, table=None):
    table = PROXY_RADII if table is None else table
    try:
        return table[category]
    except KeyError:
        known = ", ".join(sorted(table))
        raise KeyError(f"unknown object category {category!r}; known: {known}") from None


def write_radii(path, table=None):
    with open(path, "w") as fh:
        json.dump(PROXY_RADII if table is None else table, fh, indent=2, sort_keys=True)


def read_radii(path):
    with open(path) as fh:
        table = json.load(fh)
    if any(not (v > 0) for v in table.values()):
        raise ParseError(path, "radii must be positive")
    return table


# --- blobs -------------------------------------------------------------------

def write_blob(path, array):
    array = np.asarray(array)
    if array.dtype == np.float32:
        tag = 0
    elif array.dtype == np.uint8:
        tag = 1
    else:
        raise TypeError(f"unsupported blob dtype {array.dtype}")
    header = BLOB_MAGIC + struct.pack("<BI", tag, array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(array, dtype=_TAGS[tag]).tobytes())


def read_blob(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 13:
        raise ParseError(path, f"truncated header: {len(raw)} bytes, expected at least 13")
    if raw[:8] != BLOB_MAGIC:
        raise ParseError(path, f"bad magic {raw[:8]!r}")
    tag, rank = struct.unpack("<BI", raw[8:13])
    if tag not in _TAGS:
        raise ParseError(path, f"unknown dtype tag {tag}")
    head = 13 + 4 * rank
    if len(raw) < head:
        raise ParseError(path, f"truncated header: {len(raw)} bytes, expected at least {head}")
    dims = struct.unpack(f"<{rank}I", raw[13:head])
    dtype = _TAGS[tag]
    expected = head + int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) != expected:
        raise ParseError(path, f"expected {expected} bytes, found {len(raw)}")
    return np.frombuffer(raw[head:], dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


# --- schema ------------------------------------------------------------------

@dataclass
class ImageInput:
    pixels: np.ndarray
    human_mask: np.ndarray
    object_mask: np.ndarray

    def __post_init__(self):
        h, w = self.pixels.shape[:2]
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise SampleError(f"image must be H x W x 3, got {self.pixels.shape}")
        for name in ("human_mask", "object_mask"):
            m = getattr(self, name)
            if m.shape != (h, w):
                raise SampleError(f"{name} shape {m.shape} does not match image {(h, w)}")
            if not np.isin(m, (0, 1)).all():
                raise SampleError(f"{name} must be binary")


@dataclass
class InteractionSample:
    id: str
    image: ImageInput
    object_points: PointSet
    human_vertices_full: np.ndarray
    human_vertices_sampled: np.ndarray
    object_curvature: CurvatureField
    human_curvature: CurvatureField
    contact_gt: np.ndarray
    affordance_gt: np.ndarray
    center_gt: np.ndarray
    intent_class: int
    object_category: str
    scenario: str = ""

    def validate(self):
        n_o = len(self.object_points)
        if len(self.object_curvature) != n_o:
            raise SampleError(f"{self.id}: object curvature length {len(self.object_curvature)} != {n_o}")
        if len(self.human_curvature) != len(self.human_vertices_sampled):
            raise SampleError(f"{self.id}: human curvature length mismatch")
        if self.affordance_gt.shape != (n_o,):
            raise SampleError(f"{self.id}: affordance_gt must have length {n_o}")
        if self.contact_gt.shape != (len(self.human_vertices_full),):
            raise SampleError(f"{self.id}: contact_gt must have length {len(self.human_vertices_full)}")
        if not np.isin(self.contact_gt, (0, 1)).all():
            raise SampleError(f"{self.id}: contact_gt must be binary")
        if np.any(self.affordance_gt < 0) or np.any(self.affordance_gt > 1):
            raise SampleError(f"{self.id}: affordance_gt outside [0, 1]")
        if self.center_gt.shape != (3,) or not np.all(np.isfinite(self.center_gt)):
            raise SampleError(f"{self.id}: center_gt must be a finite 3-vector")
        return self


def _arrays(sample):
    arrays = {
        "image": sample.image.pixels,
        "human_mask": sample.image.human_mask,
        "object_mask": sample.image.object_mask,
        "object_points": sample.object_points.points,
        "human_vertices_full": sample.human_vertices_full,
        "human_vertices_sampled": sample.human_vertices_sampled,
        "object_curvature": sample.object_curvature.values,
        "human_curvature": sample.human_curvature.values,
        "contact_gt": sample.contact_gt,
        "affordance_gt": sample.affordance_gt,
        "center_gt": sample.center_gt,
    }
    if sample.object_points.normals is not None:
        arrays["object_normals"] = sample.object_points.normals
    return arrays


def write_sample(sample, directory):
    sample.validate()
    os.makedirs(directory, exist_ok=True)
    entries = {}
    for name, arr in _arrays(sample).items():
        arr = np.asarray(arr)
        write_blob(os.path.join(directory, name + ".bin"), arr)
        entries[name] = {"file": name + ".bin", "dtype": str(arr.dtype), "shape": list(arr.shape)}
    manifest = {
        "format": "hoirel-sample/1",
        "id": sample.id,
        "object_category": sample.object_category,
        "intent_class": int(sample.intent_class),
        "radius": radius_for(sample.object_category),
        "scenario": sample.scenario,
        "curvature_k": {"object": sample.object_curvature.k, "human": sample.human_curvature.k},
        "arrays": entries,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return directory


def read_sample(directory):
    mpath = os.path.join(directory, "manifest.json")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(mpath, f"invalid JSON ({exc})") from None
    arrays = {}
    for name, entry in manifest["arrays"].items():
        path = os.path.join(directory, entry["file"])
        arr = read_blob(path)
        if list(arr.shape) != list(entry["shape"]) or str(arr.dtype) != entry["dtype"]:
            raise ParseError(path, f"blob holds {arr.dtype}{list(arr.shape)} but manifest says "
                                   f"{entry['dtype']}{entry['shape']}")
        arrays[name] = arr
    k = manifest["curvature_k"]
    sample = InteractionSample(
        id=manifest["id"],
        image=ImageInput(arrays["image"], arrays["human_mask"], arrays["object_mask"]),
        object_points=PointSet(arrays["object_points"], arrays.get("object_normals")),
        human_vertices_full=arrays["human_vertices_full"],
        human_vertices_sampled=arrays["human_vertices_sampled"],
        object_curvature=CurvatureField(arrays["object_curvature"], k["object"]),
        human_curvature=CurvatureField(arrays["human_curvature"], k["human"]),
        contact_gt=arrays["contact_gt"],
        affordance_gt=arrays["affordance_gt"],
        center_gt=arrays["center_gt"],
        intent_class=manifest["intent_class"],
        object_category=manifest["object_category"],
        scenario=manifest.get("scenario", ""),
    )
    try:
        return sample.validate()
    except SampleError as exc:
        raise ParseError(directory, str(exc)) from None


class Importer(Protocol):
    """Turns one sample directory into an InteractionSample."""

    def load(self, directory) -> InteractionSample: ...


class NativeImporter:
    def load(self, directory):
        return read_sample(directory)


# --- dataset layout ----------------------------------------------------------

SPLITS = ("train", "val", "test")


def write_dataset(root, splits, table=None):
    """Write ``{split: [samples]}`` under ``root/<split>/<id>/`` plus ``radii.json``."""
    os.makedirs(root, exist_ok=True)
    write_radii(os.path.join(root, "radii.json"), table)
    for split, samples in splits.items():
        os.makedirs(os.path.join(root, split), exist_ok=True)
        for s in samples:
            write_sample(s, os.path.join(root, split, s.id))
    return root


def read_split(root, split, importer=None):
    importer = importer or NativeImporter()
    base = os.path.join(root, split)
    if not os.path.isdir(base):
        return []
    return [importer.load(os.path.join(base, d)) for d in sorted(os.listdir(base))
            if os.path.isfile(os.path.join(base, d, "manifest.json"))]


def split(samples, ratios=(0.8, 0.1, 0.1), seed=0):
    """Stratified deterministic split into (train, val, test).

    Per category the samples are shuffled with ``seed`` and cut by the
    rounded ratios; a category too small to cover every non-empty split
    goes to train entirely.
    """
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    by_cat = {}
    for s in samples:
        by_cat.setdefault(s.object_category, []).append(s)
    out = ([], [], [])
    n_active = int((ratios > 0).sum())
    for cat in sorted(by_cat):
        group = sorted(by_cat[cat], key=lambda s: s.id)
        perm = rng.permutation(len(group))
        group = [group[i] for i in perm]
        n = len(group)
        if n < n_active:
            log.warning("category %s has %d samples for %d splits; assigned to train", cat, n, n_active)
            out[0].extend(group)
            continue
        n_val = int(np.floor(ratios[1] * n + 0.5))
        n_test = int(np.floor(ratios[2] * n + 0.5))
        if ratios[1] > 0:
            n_val = max(n_val, 1)
        if ratios[2] > 0:
            n_test = max(n_test, 1)
        n_test = min(n_test, n - n_val)
        n_train = n - n_val - n_test
        out[0].extend(group[:n_train])
        out[1].extend(group[n_train:n_train + n_val])
        out[2].extend(group[n_train + n_val:])
    return out
