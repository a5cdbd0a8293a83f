"""Evaluation metrics for contact, affordance and spatial predictions.

Contact: precision / recall / F1 and geodesic error (cm). Affordance: AUC,
aIOU and SIM. Spatial: MSE (m^2). ``evaluate`` aggregates per-sample values
as means, overall and per object category, in a fixed order.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import json
import os

import numpy as np
from scipy.stats import rankdata

from .geometry import geodesic_nearest

AIOU_THRESHOLDS = np.arange(1, 100) / 100.0


class MetricError(ValueError):
    pass


def _same_length(a, b):
    if len(a) != len(b):
        raise MetricError(f"length mismatch: {len(a)} vs {len(b)}")


def contact_prf(pred, gt, threshold=0.5):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt).astype(bool)
    _same_length(pred, gt)
    if not 0 < threshold < 1:
        raise MetricError("threshold must lie in (0, 1)")
    pos = pred >= threshold
    tp = np.sum(pos & gt)
    fp = np.sum(pos & ~gt)
    fn = np.sum(~pos & gt)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return float(p), float(r), float(f1)


def contact_geo_error(pred_pos, gt_pos, mesh, symmetric=False, vertices=None):
    """Mean geodesic distance (cm) from predicted contact vertices to the GT set.

    Returns ``(value, flag)``; ``flag`` is None, ``"empty_prediction"`` (value
    0) or ``"empty_ground_truth"`` (value None, sample to be excluded).
    """
    pred_pos = np.unique(np.asarray(pred_pos, dtype=np.int64))
    gt_pos = np.unique(np.asarray(gt_pos, dtype=np.int64))
    if gt_pos.size == 0:
        return (None, "empty_ground_truth") if pred_pos.size else (0.0, "empty_prediction")
    if pred_pos.size == 0:
        return 0.0, "empty_prediction"
    d = geodesic_nearest(mesh, gt_pos, pred_pos, vertices).mean()
    if symmetric:
        d = 0.5 * (d + geodesic_nearest(mesh, pred_pos, gt_pos, vertices).mean())
    return float(d * 100.0), None


def affordance_auc(pred, gt_binary):
    """Probability that a random positive outranks a random negative (ties 1/2)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt_binary).astype(bool)
    _same_length(pred, gt)
    n_pos, n_neg = int(gt.sum()), int((~gt).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative ground truth")
    ranks = rankdata(pred)
    u = ranks[gt].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def affordance_aiou(pred, gt_binary, thresholds=AIOU_THRESHOLDS):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt_binary).astype(bool)
    _same_length(pred, gt)
    binar = pred[None, :] >= np.asarray(thresholds)[:, None]
    inter = (binar & gt[None]).sum(1)
    union = (binar | gt[None]).sum(1)
    iou = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return float(iou.mean())


def affordance_sim(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _same_length(pred, gt)
    if np.any(pred < 0) or np.any(gt < 0):
        raise MetricError("SIM maps must be non-negative")
    sp, sg = pred.sum(), gt.sum()
    if not (sp > 0 and sg > 0):
        raise MetricError("SIM maps must have positive sum")
    return float(np.minimum(pred / sp, gt / sg).sum())


def spatial_mse(pred_centers, gt_centers, form="squared"):
    p = np.asarray(pred_centers, dtype=np.float64).reshape(-1, 3)
    g = np.asarray(gt_centers, dtype=np.float64).reshape(-1, 3)
    _same_length(p, g)
    if len(p) == 0:
        raise MetricError("spatial_mse needs at least one pair")
    sq = ((p - g) ** 2).sum(axis=1)
    if form == "squared":
        return float(sq.mean())
    if form == "unsquared":
        return float(np.sqrt(sq).mean())
    raise MetricError(f"unknown mse form {form!r}")


# --- dataset level -----------------------------------------------------------

FIELDS = ("precision", "recall", "f1", "geo_cm", "auc", "aiou", "sim", "mse")


@dataclass
class MetricReport:
    precision: float
    recall: float
    f1: float
    geo_cm: float
    auc: float
    aiou: float
    sim: float
    mse: float
    n_samples: int = 0
    per_category: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def display(self):
        """Values on the reporting scale: AUC and aIOU x100."""
        d = {k: getattr(self, k) for k in FIELDS}
        d["auc"] *= 100
        d["aiou"] *= 100
        return d

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


@dataclass
class EvalOptions:
    contact_threshold: float = 0.5
    affordance_threshold: float = 0.5
    geo_symmetric: bool = False
    mse_form: str = "squared"


def sample_metrics(pred, sample, mesh, opts):
    """Per-sample metric values plus a list of ``(metric, reason)`` exclusions."""
    flags = []
    contact = np.asarray(pred["contact"], dtype=np.float64)
    gt_c = np.asarray(sample.contact_gt).astype(bool)
    p, r, f1 = contact_prf(contact, gt_c, opts.contact_threshold)
    geo, geo_flag = contact_geo_error(np.flatnonzero(contact >= opts.contact_threshold),
                                      np.flatnonzero(gt_c), mesh, opts.geo_symmetric,
                                      sample.human_vertices_full)
    if geo_flag:
        flags.append(("geo_cm", geo_flag))
    aff = np.asarray(pred["affordance"], dtype=np.float64)
    heat = np.asarray(sample.affordance_gt, dtype=np.float64)
    gt_a = heat > opts.affordance_threshold
    if gt_a.all() or not gt_a.any():
        auc = aiou = None
        flags.append(("auc", "single_class_ground_truth"))
        flags.append(("aiou", "single_class_ground_truth"))
    else:
        auc = affordance_auc(aff, gt_a)
        aiou = affordance_aiou(aff, gt_a)
    try:
        sim = affordance_sim(aff, heat)
    except MetricError:
        sim = None
        flags.append(("sim", "zero_sum_map"))
    center = np.asarray(pred["center"], dtype=np.float64)
    values = {"precision": p, "recall": r, "f1": f1, "geo_cm": geo, "auc": auc,
              "aiou": aiou, "sim": sim, "center": center, "gt_center": np.asarray(sample.center_gt, np.float64)}
    return values, flags


def _aggregate(rows, mse_form):
    out = {}
    for k in ("precision", "recall", "f1", "geo_cm", "auc", "aiou", "sim"):
        vals = [r[k] for r in rows if r[k] is not None]
        out[k] = float(np.mean(vals)) if vals else 0.0
    out["mse"] = spatial_mse([r["center"] for r in rows], [r["gt_center"] for r in rows], mse_form)
    return out


def _threads():
    try:
        return max(1, int(os.environ.get("LEMON_THREADS", os.cpu_count() or 1)))
    except ValueError:
        return 1


def evaluate(predictions, dataset, mesh, opts=None):
    """Aggregate metrics over ``dataset``.

    ``predictions`` maps sample id to ``{"contact", "affordance", "center"}``
    (a list aligned with ``dataset`` is accepted too).
    """
    opts = opts or EvalOptions()
    if not isinstance(predictions, dict):
        if len(predictions) != len(dataset):
            raise MetricError("predictions and dataset differ in length")
        predictions = {s.id: p for s, p in zip(dataset, predictions)}
    missing = [s.id for s in dataset if s.id not in predictions]
    if missing:
        raise MetricError(f"no prediction for samples {missing[:5]}")
    if not dataset:
        raise MetricError("empty dataset")
    ordered = sorted(dataset, key=lambda s: s.id)
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(lambda s: sample_metrics(predictions[s.id], s, mesh, opts), ordered))
    rows, flags, by_cat = [], [], {}
    for s, (values, sflags) in zip(ordered, results):
        rows.append(values)
        by_cat.setdefault(s.object_category, []).append(values)
        flags += [{"sample": s.id, "metric": m, "reason": why} for m, why in sflags]
    overall = _aggregate(rows, opts.mse_form)
    per_cat = {c: {**_aggregate(v, opts.mse_form), "n_samples": len(v)} for c, v in sorted(by_cat.items())}
    return MetricReport(**overall, n_samples=len(rows), per_category=per_cat, flags=flags)


REPORT_SCHEMA = {
    "type": "object",
    "required": list(FIELDS) + ["n_samples", "per_category", "flags"],
    "properties": {
        **{k: {"type": "number"} for k in FIELDS},
        "n_samples": {"type": "integer", "minimum": 1},
        "per_category": {"type": "object", "additionalProperties": {
            "type": "object", "required": list(FIELDS) + ["n_samples"]}},
        "flags": {"type": "array", "items": {
            "type": "object", "required": ["sample", "metric", "reason"]}},
    },
}
