"""Command-line entry point: ``hoirel <command> [flags] [key=value ...]``.

Trailing ``key=value`` arguments override config entries (dotted keys, JSON
values). Exit codes: 0 success, 1 validation error, 2 IO error. Failures
print one ``hoirel: error: ...`` line to stderr.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

log = logging.getLogger("hoirel")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _threads():
    value = os.environ.get("LEMON_THREADS")
    if value:
        import torch

        torch.set_num_threads(max(1, int(value)))


def _config(args):
    from .config import load_config

    return load_config(args.config, args.overrides)


def load_points(path):
    """Points from ``.npy``, a sample blob (``.bin``) or whitespace text.

    Rows hold ``x y z`` or ``x y z nx ny nz``; returns ``(points, normals or None)``.
    """
    from .data import read_blob

    if path.endswith(".npy"):
        pts = np.load(path)
    elif path.endswith(".bin"):
        pts = read_blob(path)
    else:
        pts = np.loadtxt(path, ndmin=2)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ValueError(f"{path}: expected N x 3 points, got shape {pts.shape}")
    return pts[:, :3], (pts[:, 3:6] if pts.shape[1] >= 6 else None)


# --- commands ----------------------------------------------------------------

def cmd_gen(args):
    from .data import split, write_dataset
    from .synthetic import generate_synthetic

    cfg = _config(args)
    samples = generate_synthetic(cfg.data, args.seed)
    tr, va, te = split(samples, cfg.train.split_ratios, args.seed)
    write_dataset(args.out, {"train": tr, "val": va, "test": te})
    log.info("gen: %d samples (%d/%d/%d) -> %s", len(samples), len(tr), len(va), len(te), args.out)


def cmd_train(args):
    from .data import read_split
    from .trainer import train

    cfg = _config(args)
    if not os.path.isdir(args.data):
        raise FileNotFoundError(f"dataset root {args.data} does not exist")
    tr = read_split(args.data, "train")
    va = read_split(args.data, "val")
    res = train(cfg, tr, va, args.out)
    log.info("train: %d steps, loss %.4f -> %.4f -> %s", res.steps, res.initial_loss, res.final_loss, args.out)


def cmd_infer(args):
    from .checkpoint import load_checkpoint
    from .data import read_sample, write_blob
    from .trainer import predict, template_for

    model, _ = load_checkpoint(args.ckpt)
    sample = read_sample(args.sample)
    pred = predict(model, [sample], template_for(model.cfg), with_attention=True)[sample.id]
    os.makedirs(os.path.join(args.out, "attention"), exist_ok=True)
    files = {}
    for name in ("contact", "affordance", "center", "intent_logits"):
        write_blob(os.path.join(args.out, name + ".bin"), pred[name].astype(np.float32))
        files[name] = name + ".bin"
    for name, w in pred["attention"].items():
        rel = os.path.join("attention", name + ".bin")
        write_blob(os.path.join(args.out, rel), w.astype(np.float32))
        files["attention/" + name] = rel
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump({"sample": sample.id, "files": files}, fh, indent=2, sort_keys=True)
    log.info("infer: %s -> %s", sample.id, args.out)


def eval_split(root):
    """The split ``eval`` scores: test, else val, else train."""
    from .data import read_split

    for name in ("test", "val", "train"):
        samples = read_split(root, name)
        if samples:
            return name, samples
    raise ValueError(f"{root}: no samples in any split")


def cmd_eval(args):
    from .checkpoint import load_checkpoint
    from .metrics import evaluate
    from .trainer import predict, template_for

    model, _ = load_checkpoint(args.ckpt)
    if not os.path.isdir(args.data):
        raise FileNotFoundError(f"dataset root {args.data} does not exist")
    name, samples = eval_split(args.data)
    mesh = template_for(model.cfg)
    report = evaluate(predict(model, samples, mesh), samples, mesh)
    out = args.out if args.out.endswith(".json") else os.path.join(args.out, "metrics.json")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    report.write(out)
    log.info("eval: %s split, %d samples, f1 %.3f -> %s", name, report.n_samples, report.f1, out)


def cmd_curvature(args):
    from .geometry import estimate_normals, normal_curvature, write_curvature_cache

    pts, normals = load_points(args.points)
    if normals is None:
        pts, _ = estimate_normals(pts, k=args.k)
    field = normal_curvature(pts, k=args.k, normals=normals)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    write_curvature_cache(args.out, field.values)
    log.info("curvature: %d points, k=%d -> %s", len(field.values), args.k, args.out)


def cmd_report(args):
    from .report import make_report

    for p in make_report(args.run, args.out):
        log.info("report: %s", p)


# --- parser ------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="hoirel", description="Human-object interaction elements: data, training and evaluation.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help, *flags, overrides=False):
        sp = sub.add_parser(name, help=help)
        for flag, kw in flags:
            sp.add_argument(flag, **kw)
        if overrides:
            sp.add_argument("overrides", nargs="*", metavar="key=value")
        sp.set_defaults(fn=fn)

    req = {"required": True}
    add("gen", cmd_gen, "generate a synthetic dataset",
        ("--config", {}), ("--out", req), ("--seed", {"type": int, "default": 0}), overrides=True)
    add("train", cmd_train, "train a model",
        ("--config", {}), ("--data", req), ("--out", req), overrides=True)
    add("infer", cmd_infer, "predict interaction elements for one sample",
        ("--ckpt", req), ("--sample", req), ("--out", req))
    add("eval", cmd_eval, "evaluate a checkpoint on a dataset",
        ("--ckpt", req), ("--data", req), ("--out", req))
    add("curvature", cmd_curvature, "normal curvature of a point cloud",
        ("--points", req), ("--k", {"type": int, "default": 20}), ("--out", req))
    add("report", cmd_report, "plot figures for a run",
        ("--run", req), ("--out", req))
    return p


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _threads()
        args.fn(args)
    except UsageError as exc:
        print(f"hoirel: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, EOFError) as exc:
        print(f"hoirel: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError, RuntimeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"hoirel: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
