"""Image and point-cloud feature extractors.

``ImageEncoder`` stacks stride-2 convolutions over RGB plus the two masks,
then a 1x1 projection to ``C`` channels, flattened to ``C x (h*w)``.
``PointEncoder`` is a dynamic-graph edge-convolution stack whose k-NN graph
is rebuilt in feature space at every layer.
"""

import torch
from torch import nn
import torch.nn.functional as F


class EncoderError(ValueError):
    pass


def knn_indices(x, k):
    """k nearest neighbours (self excluded) of each column of ``x`` (B, C, N).

    Distances are per-pair sums of squared differences and ties resolve to the
    lower index, so the result is equivariant under point permutation.
    """
    xt = x.detach().transpose(1, 2)
    d = torch.cdist(xt, xt, compute_mode="donot_use_mm_for_euclid_dist")
    n = d.shape[-1]
    d = d + torch.diag(torch.full((n,), float("inf"), dtype=d.dtype, device=d.device))
    return torch.sort(d, dim=-1, stable=True).indices[..., :k]


def gather_neighbors(x, idx):
    """(B, C, N), (B, N, k) -> (B, C, N, k)."""
    b, c, n = x.shape
    k = idx.shape[-1]
    flat = idx.reshape(b, 1, n * k).expand(b, c, n * k)
    return torch.gather(x, 2, flat).view(b, c, n, k)


class EdgeConv(nn.Module):
    """max_j act(W [x_i, x_j - x_i] + b) over the k neighbours of i."""

    def __init__(self, c_in, c_out, k, slope=0.2):
        super().__init__()
        self.k = k
        self.slope = slope
        self.lin = nn.Conv2d(2 * c_in, c_out, 1)

    def forward(self, x, idx=None):
        if idx is None:
            idx = knn_indices(x, self.k)
        nb = gather_neighbors(x, idx)
        center = x.unsqueeze(-1).expand_as(nb)
        edge = torch.cat([center, nb - center], dim=1)
        return F.leaky_relu(self.lin(edge), self.slope).max(dim=-1).values


class PointEncoder(nn.Module):
    def __init__(self, widths, channels, k):
        super().__init__()
        self.k = k
        dims = [3] + list(widths)
        self.layers = nn.ModuleList(EdgeConv(a, b, k) for a, b in zip(dims[:-1], dims[1:]))
        self.proj = nn.Conv1d(sum(widths), channels, 1)

    def forward(self, points):
        """``points`` (B, N, 3) -> features (B, C, N)."""
        if points.shape[1] < self.k + 1:
            raise EncoderError(f"need at least k+1={self.k + 1} points, got {points.shape[1]}")
        x = points.transpose(1, 2)
        feats = []
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return self.proj(torch.cat(feats, dim=1))


class ImageEncoder(nn.Module):
    def __init__(self, widths, channels, side):
        super().__init__()
        self.side = side
        dims = [5] + list(widths)
        self.blocks = nn.ModuleList(nn.Conv2d(a, b, 3, stride=2, padding=1) for a, b in zip(dims[:-1], dims[1:]))
        self.proj = nn.Conv2d(dims[-1], channels, 1)

    def forward(self, pixels, human_mask, object_mask):
        """``pixels`` (B, H, W, 3), masks (B, H, W) -> (B, C, h*w)."""
        b, h, w, _ = pixels.shape
        if h != w or h != self.side:
            raise EncoderError(f"expected {self.side}x{self.side} image, got {h}x{w}")
        x = torch.cat([pixels.permute(0, 3, 1, 2), human_mask.unsqueeze(1), object_mask.unsqueeze(1)], dim=1)
        for conv in self.blocks:
            x = F.relu(conv(x))
        return self.proj(x).flatten(2)
