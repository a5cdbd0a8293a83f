"""Training objectives.

All functions take torch tensors with a leading batch axis where noted and
return batch means, so they can be used directly for autograd.
"""

from dataclasses import asdict, dataclass
import json

import torch
import torch.nn.functional as F

from .config import LossWeights

CLAMP = 1e-7


class LossError(ValueError):
    pass


def _check_finite(*tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise LossError("non-finite loss input")


def focal_term(pred, target, alpha=0.25, gamma=2.0):
    """Alpha-balanced focal term averaged over the last axis (predictions clamped)."""
    x = pred.clamp(CLAMP, 1 - CLAMP)
    y = target
    return (-(1 - alpha) * (1 - y) * x ** gamma * torch.log(1 - x)
            - alpha * y * (1 - x) ** gamma * torch.log(x)).mean(-1)


def focal_dice(pred, target, alpha=0.25, gamma=2.0, eps=1e-6, strict=True):
    """Dice terms for both classes plus the alpha-balanced focal term.

    ``pred`` and ``target`` are ``(N,)`` or ``(B, N)``; the result is the
    batch mean. Predictions are clamped to ``[1e-7, 1 - 1e-7]``. The value is
    not floored at zero and is not zero at a perfect prediction: the first
    ratio divides by ``sum(y + x)`` and tends to 1/2 there.
    """
    if pred.shape != target.shape:
        raise LossError(f"prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")
    if strict:
        _check_finite(pred, target)
    if pred.dim() == 1:
        pred, target = pred.unsqueeze(0), target.unsqueeze(0)
    x = pred.clamp(CLAMP, 1 - CLAMP)
    y = target
    pos = ((y * x).sum(-1) + eps) / ((y + x).sum(-1) + eps)
    neg = (((1 - y) * (1 - x)).sum(-1) + eps) / ((2 - y - x).sum(-1) + eps)
    focal = focal_term(x, y, alpha, gamma)
    return (1 - pos - neg + focal).mean()


def semantic_loss(phi, intent_logits, intent_label, term="one_minus_phi"):
    """Returns ``(L_s, L_ce, consistency)`` with batch means."""
    k = intent_logits.shape[-1]
    if torch.any(intent_label < 0) or torch.any(intent_label >= k):
        raise LossError(f"intent label outside [0, {k})")
    ce = F.cross_entropy(intent_logits, intent_label)
    if term == "one_minus_phi":
        consistency = (1 - phi).mean()
    elif term == "plus_phi":
        consistency = phi.mean()
    else:
        raise LossError(f"unknown semantic term {term!r}")
    return ce + consistency, ce, consistency


def _norm(v):
    # gradient is defined as zero at the origin
    sq = (v * v).sum(-1)
    safe = torch.where(sq > 0, sq, torch.ones_like(sq))
    return torch.where(sq > 0, safe.sqrt(), torch.zeros_like(sq))


def spatial_loss(pred_center, gt_center, pelvis, strict=True):
    """Returns ``(L_pa, L_pr, L_p)``: absolute center error and pelvis-distance error."""
    if strict:
        _check_finite(pred_center, gt_center, pelvis)
    l_pa = _norm(pred_center - gt_center)
    l_pr = (_norm(pred_center - pelvis) - _norm(gt_center - pelvis)).abs()
    return l_pa.mean(), l_pr.mean(), (l_pa + l_pr).mean()


@dataclass
class LossReport:
    L_c: float
    L_a: float
    L_s: float
    L_ce: float
    phi_term: float
    L_pa: float
    L_pr: float
    L_p: float
    total: float

    def line(self, step):
        d = {"step": step, **asdict(self)}
        return json.dumps(d, sort_keys=False)


def weighted_total(components, weights):
    """``w1*L_c + w2*L_a + w3*L_s + w4*L_p`` over a dict of components."""
    return (weights.w1 * components["L_c"] + weights.w2 * components["L_a"]
            + weights.w3 * components["L_s"] + weights.w4 * components["L_p"])


def compute_losses(elements, intention, batch, weights=None, strict=True):
    """All loss components for one forward pass; returns ``(total tensor, LossReport)``.

    With ``strict=False`` non-finite predictions propagate into the report
    instead of raising, so a caller can log the failing step.
    """
    weights = weights or LossWeights()
    w = weights
    L_c = focal_dice(elements.contact, batch["contact"], w.alpha, w.gamma, w.epsilon, strict)
    L_a = focal_dice(elements.affordance, batch["affordance"], w.alpha, w.gamma, w.epsilon, strict)
    L_s, L_ce, phi_term = semantic_loss(intention.phi, elements.intent_logits, batch["intent"], w.semantic_term)
    L_pa, L_pr, L_p = spatial_loss(elements.center, batch["center"], batch["pelvis"], strict)
    parts = {"L_c": L_c, "L_a": L_a, "L_s": L_s, "L_ce": L_ce, "phi_term": phi_term,
             "L_pa": L_pa, "L_pr": L_pr, "L_p": L_p}
    total = weighted_total(parts, weights)
    values = {k: float(v.detach()) for k, v in parts.items()}
    report = LossReport(**values, total=float(weighted_total(values, weights)))
    return total, report
