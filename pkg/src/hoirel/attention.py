"""Pre-norm cross-attention blocks that keep their attention maps.

Sequences are token-major, ``(B, L, C)``.
"""

import math

import torch
from torch import nn
import torch.nn.functional as F


def attend(q, k, v, heads):
    """Scaled dot-product attention; returns ``(out, weights)``.

    ``weights`` has shape ``(B, heads, Lq, Lk)`` and rows summing to 1.
    """
    b, lq, c = q.shape
    lk = k.shape[1]
    d = c // heads
    q = q.view(b, lq, heads, d).transpose(1, 2)
    k = k.view(b, lk, heads, d).transpose(1, 2)
    v = v.view(b, lk, heads, d).transpose(1, 2)
    w = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(d), dim=-1)
    out = (w @ v).transpose(1, 2).reshape(b, lq, c)
    return out, w


class FeedForward(nn.Module):
    def __init__(self, dim, mult=4):
        super().__init__()
        self.norm = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, dim * mult)
        self.fc2 = nn.Linear(dim * mult, dim)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(self.norm(x))))


class CrossAttentionBlock(nn.Module):
    """``x + attn(LN(x), LN(ctx))`` followed by a residual feed-forward."""

    def __init__(self, dim, heads, ffn_mult=4, ffn=True):
        super().__init__()
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q_norm = nn.LayerNorm(dim)
        self.kv_norm = nn.LayerNorm(dim)
        self.q_proj = nn.Linear(dim, dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.out_proj = nn.Linear(dim, dim)
        self.ffn = FeedForward(dim, ffn_mult) if ffn else None

    def forward(self, x, context):
        ctx = self.kv_norm(context)
        out, w = attend(self.q_proj(self.q_norm(x)), self.k_proj(ctx), self.v_proj(ctx), self.heads)
        x = x + self.out_proj(out)
        if self.ffn is not None:
            x = x + self.ffn(x)
        return x, w


class MultiBranchAttention(nn.Module):
    """Several query branches attending to one shared key/value context.

    Key/value normalisation and projections are shared; each branch owns its
    query projection, output projection and feed-forward.
    """

    def __init__(self, dim, heads, branches=2, ffn_mult=4):
        super().__init__()
        self.heads = heads
        self.kv_norm = nn.LayerNorm(dim)
        self.k_proj = nn.Linear(dim, dim)
        self.v_proj = nn.Linear(dim, dim)
        self.q_norms = nn.ModuleList(nn.LayerNorm(dim) for _ in range(branches))
        self.q_projs = nn.ModuleList(nn.Linear(dim, dim) for _ in range(branches))
        self.out_projs = nn.ModuleList(nn.Linear(dim, dim) for _ in range(branches))
        self.ffns = nn.ModuleList(FeedForward(dim, ffn_mult) for _ in range(branches))

    def forward(self, queries, context):
        ctx = self.kv_norm(context)
        k, v = self.k_proj(ctx), self.v_proj(ctx)
        outs, maps = [], []
        for i, x in enumerate(queries):
            o, w = attend(self.q_projs[i](self.q_norms[i](x)), k, v, self.heads)
            x = x + self.out_projs[i](o)
            x = x + self.ffns[i](x)
            outs.append(x)
            maps.append(w)
        return outs, maps
