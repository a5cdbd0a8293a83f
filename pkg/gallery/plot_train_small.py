"""
Training on a handful of samples
================================

A short run on the desk-scale model: the loss drops, checkpoints and
per-evaluation metrics land in the run directory, and ``make_report``
turns them into figures.
"""

import os
import sys

from hoirel.config import RunConfig
from hoirel.report import make_report
from hoirel.synthetic import generate_synthetic
from hoirel.trainer import train

out = sys.argv[1] if len(sys.argv) > 1 else "gallery_output"
run = os.path.join(out, "run")

cfg = RunConfig()
cfg.train.epochs = 30
cfg.train.batch_size = 8
cfg.train.learning_rate = 2e-3
cfg.train.eval_every = 10

data = generate_synthetic(seed=0)[:8]
res = train(cfg, data, None, run)
print(f"{res.steps} steps, loss {res.initial_loss:.2f} -> {res.final_loss:.2f}")

###############################################################################
# Loss curves, per-category bars and attention maps for the first sample
for path in make_report(run, out):
    print("wrote", path)
