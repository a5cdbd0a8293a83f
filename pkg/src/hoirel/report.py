"""Static figures for a run directory: loss curves, per-category metrics and
attention heat overlays. Uses the non-interactive Agg backend."""

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_KEYS = ("total", "L_c", "L_a", "L_s", "L_p")
BAR_KEYS = ("precision", "recall", "f1", "auc", "aiou", "sim")


class ReportError(ValueError):
    pass


def read_log(path):
    rows = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                raise ReportError(f"{path}:{n}: not a JSON loss line") from None
    if not rows:
        raise ReportError(f"{path}: empty log")
    return rows


def plot_losses(rows, path):
    steps = [r["step"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for k in LOSS_KEYS:
        ax.plot(steps, [r[k] for r in rows], label=k, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_categories(metrics, path):
    cats = sorted(metrics.get("per_category", {}))
    if not cats:
        raise ReportError("metrics have no per-category breakdown")
    x = np.arange(len(BAR_KEYS))
    width = 0.8 / len(cats)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, c in enumerate(cats):
        vals = [metrics["per_category"][c][k] for k in BAR_KEYS]
        ax.bar(x + i * width, vals, width, label=c)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(BAR_KEYS)
    ax.set_ylim(0, 1)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def _token_map(weights, side):
    """Head-averaged attention of the prepended token over the image grid."""
    w = np.asarray(weights).mean(axis=0)[0]
    return w.reshape(side, side)


def plot_attention(sample, pred, path):
    """Image with token-to-image attention overlays, plus predicted maps on the geometry."""
    pixels = sample.image.pixels
    att = pred["attention"]
    n_tok = att["f_delta_object"].shape[-1]
    side = int(round(np.sqrt(n_tok)))
    fig = plt.figure(figsize=(12, 3.2))
    for i, key in enumerate(("f_delta_object", "f_delta_human")):
        ax = fig.add_subplot(1, 4, i + 1)
        ax.imshow(pixels)
        ax.imshow(_token_map(att[key], side), cmap="jet", alpha=0.5,
                  extent=(0, pixels.shape[1], pixels.shape[0], 0), interpolation="bilinear")
        ax.set_title(key.replace("f_delta_", "") + " token", fontsize=9)
        ax.axis("off")
    ax = fig.add_subplot(1, 4, 3, projection="3d")
    p = sample.object_points.points
    ax.scatter(p[:, 0], p[:, 1], p[:, 2], c=pred["affordance"], cmap="viridis", s=4, vmin=0, vmax=1)
    ax.set_title("affordance", fontsize=9)
    ax.set_axis_off()
    ax = fig.add_subplot(1, 4, 4, projection="3d")
    v = sample.human_vertices_full
    ax.scatter(v[:, 0], v[:, 1], v[:, 2], c=pred["contact"], cmap="Reds", s=4, vmin=0, vmax=1)
    ax.set_title("contact", fontsize=9)
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def make_report(run_dir, out_dir):
    """Write ``losses.png``, ``categories.png`` and ``attention.png``; returns their paths."""
    from .checkpoint import load_checkpoint
    from .data import read_sample
    from .trainer import predict, template_for

    os.makedirs(out_dir, exist_ok=True)
    written = [plot_losses(read_log(os.path.join(run_dir, "log.txt")), os.path.join(out_dir, "losses.png"))]
    with open(os.path.join(run_dir, "metrics.json")) as fh:
        metrics = json.load(fh)
    written.append(plot_categories(metrics, os.path.join(out_dir, "categories.png")))
    probe = os.path.join(run_dir, "probe_sample")
    if os.path.isdir(probe):
        model, _ = load_checkpoint(os.path.join(run_dir, "ckpt_final"))
        sample = read_sample(probe)
        pred = predict(model, [sample], template_for(model.cfg), with_attention=True)[sample.id]
        written.append(plot_attention(sample, pred, os.path.join(out_dir, "attention.png")))
    return written
