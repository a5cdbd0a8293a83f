"""Deterministic training loop, inference helpers and gradient verification.

A run directory holds ``config.snapshot.json``, ``log.txt`` (one JSON loss
line per step), ``ckpt_best/``, ``ckpt_final/``, ``metrics.json`` from the
latest evaluation, ``evals/step_<n>.json`` for each evaluation and
``probe_sample/``, the first evaluation sample, used for attention plots.
"""

from dataclasses import asdict, dataclass
import json
import logging
import math
import os

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import LossWeights, RunConfig
from .data import write_sample
from .losses import compute_losses, focal_dice, semantic_loss, spatial_loss
from .metrics import EvalOptions, evaluate
from .model import InteractionModel, make_batch
from .template import humanoid_template

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    def __init__(self, message, report=None, step=None):
        super().__init__(message)
        self.report = report
        self.step = step


def template_for(model_cfg):
    return humanoid_template(model_cfg.template, model_cfg.n_human_sampled)


def _dtype(precision):
    return torch.float64 if precision == 64 else torch.float32


def build_model(cfg, mesh=None, seed=None):
    if seed is not None:
        torch.manual_seed(seed)
    mesh = mesh or template_for(cfg.model)
    model = InteractionModel(cfg.model, mesh)
    return model.to(_dtype(cfg.train.precision)), mesh


def _slice(batch, idx):
    return {k: v[idx] for k, v in batch.items()}


@torch.no_grad()
def predict(model, samples, mesh, batch_size=16, with_attention=False):
    """``{sample id: {"contact", "affordance", "center"[, "attention"]}}`` as numpy arrays."""
    model.eval()
    dtype = next(model.parameters()).dtype
    out = {}
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        res = model(make_batch(chunk, mesh, dtype))
        el = res.elements
        for i, s in enumerate(chunk):
            d = {"contact": el.contact[i].numpy(), "affordance": el.affordance[i].numpy(),
                 "center": el.center[i].numpy(), "intent_logits": el.intent_logits[i].numpy()}
            if with_attention:
                d["attention"] = {k: v[i].numpy() for k, v in res.attention.items()}
            out[s.id] = d
    return out


@torch.no_grad()
def mean_loss(model, samples, mesh, weights, batch_size=16):
    dtype = next(model.parameters()).dtype
    total, n = 0.0, 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        b = make_batch(chunk, mesh, dtype)
        res = model(b)
        _, rep = compute_losses(res.elements, res.intention, b, weights)
        total += rep.total * len(chunk)
        n += len(chunk)
    return total / n


@dataclass
class TrainResult:
    run_dir: str
    steps: int
    initial_loss: float
    final_loss: float
    best_loss: float


def train(cfg, train_set, val_set=None, run_dir="run", mesh=None):
    """Adam training; bitwise reproducible given (config, data).

    Evaluation runs every ``eval_every`` steps and after the last step on
    ``val_set`` (the training set when ``val_set`` is empty). ``ckpt_best``
    tracks the lowest evaluation loss.
    """
    if not train_set:
        raise TrainingError("training set is empty")
    cfg = cfg if isinstance(cfg, RunConfig) else RunConfig(**cfg)
    tc = cfg.train
    os.makedirs(run_dir, exist_ok=True)
    os.makedirs(os.path.join(run_dir, "evals"), exist_ok=True)
    with open(os.path.join(run_dir, "config.snapshot.json"), "w") as fh:
        fh.write(cfg.dumps())

    model, mesh = build_model(cfg, mesh, seed=tc.seed)
    dtype = _dtype(tc.precision)
    data = make_batch(train_set, mesh, dtype)
    eval_set = val_set or train_set
    opt = torch.optim.Adam(model.parameters(), lr=tc.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    gen = torch.Generator().manual_seed(tc.seed)
    opts = EvalOptions(tc.contact_threshold, tc.affordance_threshold)
    write_sample(eval_set[0], os.path.join(run_dir, "probe_sample"))

    n = len(train_set)
    step = 0
    best = math.inf
    initial = mean_loss(model, train_set, mesh, cfg.loss)

    def run_eval():
        nonlocal best
        loss = mean_loss(model, eval_set, mesh, cfg.loss)
        report = evaluate(predict(model, eval_set, mesh), eval_set, mesh, opts)
        d = {"step": step, "eval_loss": loss, **report.to_dict()}
        for path in (os.path.join(run_dir, "metrics.json"), os.path.join(run_dir, "evals", f"step_{step:06d}.json")):
            with open(path, "w") as fh:
                json.dump(d, fh, indent=2, sort_keys=True)
        if loss < best:
            best = loss
            save_checkpoint(model, os.path.join(run_dir, "ckpt_best"), {"step": step, "eval_loss": loss})
        model.train()

    with open(os.path.join(run_dir, "log.txt"), "w") as logf:
        for _ in range(tc.epochs):
            perm = torch.randperm(n, generator=gen)
            for start in range(0, n, tc.batch_size):
                model.train()
                batch = _slice(data, perm[start:start + tc.batch_size])
                res = model(batch)
                total, rep = compute_losses(res.elements, res.intention, batch, cfg.loss, strict=False)
                step += 1
                if not math.isfinite(rep.total):
                    raise TrainingError(f"non-finite loss at step {step}: {rep.line(step)}", rep, step)
                opt.zero_grad(set_to_none=True)
                total.backward()
                opt.step()
                logf.write(rep.line(step) + "\n")
                if step % tc.eval_every == 0:
                    logf.flush()
                    run_eval()
        if step == 0 or step % tc.eval_every:
            run_eval()
    save_checkpoint(model, os.path.join(run_dir, "ckpt_final"), {"step": step})
    final = mean_loss(model, train_set, mesh, cfg.loss)
    return TrainResult(run_dir, step, initial, final, best)


# --- gradient verification ---------------------------------------------------

def rel_error(a, n, floor=1e-6):
    return abs(a - n) / max(abs(a), abs(n), floor)


@dataclass
class GradCheckReport:
    max_rel_error: float
    entries: list

    def to_dict(self):
        return asdict(self)


def grad_check(cfg, samples, n_params=20, seed=0, h=1e-5, mesh=None, zero_weights=False):
    """Central finite differences vs autograd for random scalar parameters of the total loss."""
    cfg = cfg if isinstance(cfg, RunConfig) else RunConfig(**cfg)
    cfg.train.precision = 64
    model, mesh = build_model(cfg, mesh, seed=seed)
    model.train()
    batch = make_batch(samples, mesh, torch.float64)
    weights = cfg.loss
    if zero_weights:
        weights = LossWeights(0.0, 0.0, 0.0, 0.0, weights.alpha, weights.gamma, weights.epsilon, weights.semantic_term)

    def loss():
        res = model(batch)
        return compute_losses(res.elements, res.intention, batch, weights)[0]

    model.zero_grad()
    loss().backward()
    named = [(k, p) for k, p in model.named_parameters()]
    sizes = np.array([p.numel() for _, p in named], dtype=np.float64)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(named), size=n_params, p=sizes / sizes.sum())
    entries = []
    with torch.no_grad():
        for pi in picks:
            name, p = named[pi]
            j = int(rng.integers(p.numel()))
            flat = p.view(-1)
            analytic = float(p.grad.view(-1)[j])
            old = float(flat[j])
            flat[j] = old + h
            up = float(loss())
            flat[j] = old - h
            down = float(loss())
            flat[j] = old
            numeric = (up - down) / (2 * h)
            entries.append({"param": name, "index": j, "analytic": analytic, "numeric": numeric,
                            "rel_error": rel_error(analytic, numeric)})
    return GradCheckReport(max(e["rel_error"] for e in entries), entries)


def grad_check_losses(n_instances=100, n=12, seed=0, h=1e-6, weights=None):
    """Finite-difference check of every loss w.r.t. its prediction inputs."""
    weights = weights or LossWeights()
    g = torch.Generator().manual_seed(seed)
    worst = 0.0
    for _ in range(n_instances):
        pred = (0.05 + 0.9 * torch.rand(n, generator=g, dtype=torch.float64)).requires_grad_()
        target = torch.rand(n, generator=g, dtype=torch.float64)
        logits = torch.randn(4, generator=g, dtype=torch.float64).requires_grad_()
        phi = (torch.rand(1, generator=g, dtype=torch.float64) * 2 - 1).requires_grad_()
        label = torch.randint(0, 4, (1,), generator=g)
        center = torch.randn(3, generator=g, dtype=torch.float64).requires_grad_()
        gt, pelvis = torch.randn(2, 3, generator=g, dtype=torch.float64)

        def f(pred, logits, phi, center):
            return (focal_dice(pred, target, weights.alpha, weights.gamma, weights.epsilon)
                    + semantic_loss(phi, logits.unsqueeze(0), label)[0]
                    + spatial_loss(center.unsqueeze(0), gt.unsqueeze(0), pelvis.unsqueeze(0))[2])

        inputs = [pred, logits, phi, center]
        f(*inputs).backward()
        with torch.no_grad():
            for t in inputs:
                flat = t.view(-1)
                for j in range(flat.numel()):
                    old = float(flat[j])
                    flat[j] = old + h
                    up = float(f(*inputs))
                    flat[j] = old - h
                    down = float(f(*inputs))
                    flat[j] = old
                    worst = max(worst, rel_error(float(t.grad.view(-1)[j]), (up - down) / (2 * h)))
    return worst
