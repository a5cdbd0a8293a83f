"""
Normal curvature of point clouds
================================

Curvature is averaged over osculating circles through each point and its
k nearest neighbours. A sphere of radius R gives 1/R in magnitude, a plane
gives zero, and a cylinder sits in between.
"""

import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from hoirel.geometry import estimate_normals, normal_curvature
from hoirel.template import cylinder, sphere_cap

out = sys.argv[1] if len(sys.argv) > 1 else "gallery_output"
os.makedirs(out, exist_ok=True)
rng = np.random.default_rng(0)

###############################################################################
# A sphere of radius 0.2 sampled with its exact normals
pts, nrm = sphere_cap(rng, 1024, 0.2, cap_height=0.4)
sphere = normal_curvature(pts, k=20, normals=nrm).values
print("sphere  mean |k| = %.3f (1/R = %.3f)" % (np.abs(sphere).mean(), 1 / 0.2))

###############################################################################
# A cylinder, this time with normals estimated from the points alone.
# The sign of an estimated normal is only fixed up to a global flip.
pts_c, _ = cylinder(rng, 1024, 0.1, 0.6, caps=False)
cloud, _ = estimate_normals(pts_c, k=20)
cyl = normal_curvature(cloud, k=20).values
print("cylinder mean |k| = %.3f (0 along the axis, 1/R = 10 around it)" % np.abs(cyl).mean())

###############################################################################
# Colour each cloud by its curvature
fig = plt.figure(figsize=(9, 4))
for i, (p, k, title) in enumerate([(pts, sphere, "sphere"), (cloud.points, cyl, "cylinder")]):
    ax = fig.add_subplot(1, 2, i + 1, projection="3d")
    sc = ax.scatter(*p.T, c=np.abs(k), s=4, cmap="viridis")
    ax.set_title(title)
    fig.colorbar(sc, ax=ax, shrink=0.6)
fig.savefig(os.path.join(out, "curvature.png"), dpi=100)
