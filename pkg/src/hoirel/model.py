"""Joint human-contact / object-affordance / spatial-relation network.

Pipeline: encoders -> intention excavation -> curvature-guided correlation
-> contact-aware spatial relation -> decoder. Feature tensors are kept
channel-first, ``(B, C, L)``; attention runs token-major.
"""

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .attention import CrossAttentionBlock, MultiBranchAttention
from .config import ModelConfig
from .encoders import ImageEncoder, PointEncoder
from .geometry import pelvis_position


class ModelError(ValueError):
    pass


@dataclass
class FeatureBundle:
    F_i: torch.Tensor
    F_o: torch.Tensor
    F_h: torch.Tensor

    @property
    def channels(self):
        return self.F_i.shape[1]


@dataclass
class IntentionState:
    F_to: torch.Tensor
    F_th: torch.Tensor
    F_to_bar: torch.Tensor
    F_th_bar: torch.Tensor
    T_o_bar: torch.Tensor
    T_h_bar: torch.Tensor
    F_o_bar: torch.Tensor
    F_h_bar: torch.Tensor
    phi: torch.Tensor


@dataclass
class CorrelationState:
    C_o_emb: torch.Tensor
    C_h_emb: torch.Tensor
    C_o_bar: torch.Tensor
    C_h_bar: torch.Tensor
    F_co_bar: torch.Tensor
    F_ch_bar: torch.Tensor
    phi_a: torch.Tensor
    phi_c: torch.Tensor


@dataclass
class SpatialState:
    T_sp: torch.Tensor
    pe: torch.Tensor
    query: torch.Tensor
    phi_p: torch.Tensor


@dataclass
class InteractionElements:
    contact: torch.Tensor
    affordance: torch.Tensor
    center: torch.Tensor
    intent_logits: torch.Tensor


@dataclass
class ForwardResult:
    elements: InteractionElements
    bundle: FeatureBundle
    intention: IntentionState
    correlation: CorrelationState
    spatial: SpatialState
    attention: dict


def cosine_similarity(a, b, eps=1e-12):
    """Cosine of the angle between token vectors along the last axis."""
    return (a * b).sum(-1) / (a.norm(dim=-1) * b.norm(dim=-1)).clamp_min(eps)


class ProjectionHead(nn.Module):
    """Linear -> LayerNorm -> ReLU -> Linear(1), applied per token."""

    def __init__(self, dim, hidden=None):
        super().__init__()
        hidden = hidden or max(dim // 2, 1)
        self.fc1 = nn.Linear(dim, hidden)
        self.norm = nn.LayerNorm(hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, x):
        return self.fc2(torch.relu(self.norm(self.fc1(x)))).squeeze(-1)


def _t(x):
    return x.transpose(1, 2)


class InteractionModel(nn.Module):
    def __init__(self, cfg=None, mesh=None):
        super().__init__()
        self.cfg = cfg = (cfg or ModelConfig()).validate()
        c = cfg.channels
        self.image_encoder = ImageEncoder(cfg.image_widths, c, cfg.image_side)
        self.object_encoder = PointEncoder(cfg.edge_widths, c, cfg.knn_k)
        self.human_encoder = PointEncoder(cfg.edge_widths, c, cfg.knn_k)

        self.token_o = nn.Parameter(torch.randn(c) * 0.02)
        self.token_h = nn.Parameter(torch.randn(c) * 0.02)
        self.f_delta = MultiBranchAttention(c, cfg.heads, 2, cfg.ffn_mult)

        self.curvature_embed = nn.Sequential(nn.Conv1d(1, c, 1), nn.ReLU(), nn.Conv1d(c, c, 1))
        self.f_m = CrossAttentionBlock(c, cfg.heads, cfg.ffn_mult)
        self.fuse = nn.Conv1d(2 * c, c, 1)
        self.f_theta = CrossAttentionBlock(c, cfg.heads, cfg.ffn_mult)

        self.T_sp = nn.Parameter(torch.randn(3, c) * 0.02)
        self.pe = nn.Parameter(torch.randn(5, c) * 0.02)
        self.f_rho = CrossAttentionBlock(c, cfg.heads, cfg.ffn_mult)

        self.affordance_head = ProjectionHead(c)
        self.contact_head = ProjectionHead(c)
        self.center_head = ProjectionHead(c)
        self.contact_up = nn.Linear(cfg.n_human_sampled, cfg.n_human_full)
        self.intent_classifier = nn.Linear(c, cfg.n_classes)
        if mesh is not None:
            self.init_contact_up(mesh)

    def init_contact_up(self, mesh):
        """Start the vertex up-projection at the normalised transpose of the downsample map."""
        if (mesh.n_sampled, mesh.n_full) != (self.cfg.n_human_sampled, self.cfg.n_human_full):
            raise ModelError(f"mesh has {mesh.n_full}/{mesh.n_sampled} vertices, config expects "
                             f"{self.cfg.n_human_full}/{self.cfg.n_human_sampled}")
        w = np.asarray(mesh.downsample_map.T.todense())
        s = w.sum(axis=1, keepdims=True)
        if np.all(s > 0):
            with torch.no_grad():
                self.contact_up.weight.copy_(torch.as_tensor(w / s))
                self.contact_up.bias.zero_()

    # -- stages ---------------------------------------------------------------

    def encode(self, batch):
        F_i = self.image_encoder(batch["pixels"], batch["human_mask"], batch["object_mask"])
        F_o = self.object_encoder(batch["object_points"])
        F_h = self.human_encoder(batch["human_points"])
        if not (F_i.shape[1] == F_o.shape[1] == F_h.shape[1]):
            raise ModelError("channel width differs between image and geometry features")
        return FeatureBundle(F_i, F_o, F_h)

    def intention_excavation(self, bundle):
        b, c, _ = bundle.F_o.shape
        if bundle.F_i.shape[1] != c or bundle.F_h.shape[1] != c:
            raise ModelError("channel mismatch between image and geometry features")
        T_o = self.token_o.view(1, c, 1).expand(b, c, 1)
        T_h = self.token_h.view(1, c, 1).expand(b, c, 1)
        F_to = torch.cat([T_o, bundle.F_o], dim=2)
        F_th = torch.cat([T_h, bundle.F_h], dim=2)
        (o, h), maps = self.f_delta([_t(F_to), _t(F_th)], _t(bundle.F_i))
        F_to_bar, F_th_bar = _t(o), _t(h)
        T_o_bar, F_o_bar = F_to_bar[:, :, :1], F_to_bar[:, :, 1:]
        T_h_bar, F_h_bar = F_th_bar[:, :, :1], F_th_bar[:, :, 1:]
        phi = cosine_similarity(T_o_bar.squeeze(-1), T_h_bar.squeeze(-1))
        state = IntentionState(F_to, F_th, F_to_bar, F_th_bar, T_o_bar, T_h_bar, F_o_bar, F_h_bar, phi)
        return state, {"f_delta_object": maps[0], "f_delta_human": maps[1]}

    def curvature_correlation(self, state, C_o, C_h):
        if C_o.shape[-1] != state.F_o_bar.shape[-1] or C_h.shape[-1] != state.F_h_bar.shape[-1]:
            raise ModelError("curvature length does not match the geometry feature")
        C_o_emb = self.curvature_embed(C_o.unsqueeze(1))
        C_h_emb = self.curvature_embed(C_h.unsqueeze(1))
        co, w_o = self.f_m(_t(C_o_emb), _t(C_h_emb))
        ch, w_h = self.f_m(_t(C_h_emb), _t(C_o_emb))
        C_o_bar, C_h_bar = _t(co), _t(ch)
        F_co = self.fuse(torch.cat([C_o_bar, state.F_o_bar], dim=1))
        F_ch = self.fuse(torch.cat([C_h_bar, state.F_h_bar], dim=1))
        phi_a, w_a = self.f_theta(_t(F_co), _t(torch.cat([F_ch, state.T_o_bar], dim=2)))
        phi_c, w_c = self.f_theta(_t(F_ch), _t(torch.cat([F_co, state.T_h_bar], dim=2)))
        out = CorrelationState(C_o_emb, C_h_emb, C_o_bar, C_h_bar, F_co, F_ch, _t(phi_a), _t(phi_c))
        return out, {"f_m_object": w_o, "f_m_human": w_h, "f_theta_affordance": w_a, "f_theta_contact": w_c}

    def spatial_relation(self, corr, intent):
        b, c, _ = corr.F_co_bar.shape
        T_sp = self.T_sp.t().unsqueeze(0).expand(b, c, 3)
        pooled_o = corr.F_co_bar.max(dim=2, keepdim=True).values
        pooled_h = corr.F_ch_bar.max(dim=2, keepdim=True).values
        query = torch.cat([pooled_o, intent.T_o_bar, T_sp], dim=2) + self.pe.t().unsqueeze(0)
        context = torch.cat([pooled_h, intent.T_h_bar, corr.phi_c], dim=2)
        out, w = self.f_rho(_t(query), _t(context))
        phi_p = _t(out)[:, :, 2:]
        return SpatialState(T_sp, self.pe, query, phi_p), {"f_rho": w}

    def decode(self, phi_c, phi_a, phi_p, F_i):
        if phi_c.shape[-1] != self.cfg.n_human_sampled:
            raise ModelError(f"contact feature has {phi_c.shape[-1]} vertices, expected {self.cfg.n_human_sampled}")
        affordance = torch.sigmoid(self.affordance_head(_t(phi_a)))
        contact = torch.sigmoid(self.contact_up(self.contact_head(_t(phi_c))))
        center = self.center_head(_t(phi_p))
        logits = self.intent_classifier(F_i.mean(dim=2))
        return InteractionElements(contact, affordance, center, logits)

    def forward(self, batch):
        bundle = self.encode(batch)
        intent, maps = self.intention_excavation(bundle)
        corr, m2 = self.curvature_correlation(intent, batch["object_curvature"], batch["human_curvature"])
        spatial, m3 = self.spatial_relation(corr, intent)
        elements = self.decode(corr.phi_c, corr.phi_a, spatial.phi_p, bundle.F_i)
        return ForwardResult(elements, bundle, intent, corr, spatial, {**maps, **m2, **m3})


def make_batch(samples, mesh, dtype=torch.float32):
    """Stack samples into model inputs and training targets."""
    def st(get, dt=dtype):
        return torch.as_tensor(np.stack([np.asarray(get(s), dtype=np.float64) for s in samples]), dtype=dt)

    return {
        "pixels": st(lambda s: s.image.pixels),
        "human_mask": st(lambda s: s.image.human_mask),
        "object_mask": st(lambda s: s.image.object_mask),
        "object_points": st(lambda s: s.object_points.points),
        "human_points": st(lambda s: s.human_vertices_sampled),
        "object_curvature": st(lambda s: s.object_curvature.values),
        "human_curvature": st(lambda s: s.human_curvature.values),
        "contact": st(lambda s: s.contact_gt),
        "affordance": st(lambda s: s.affordance_gt),
        "center": st(lambda s: s.center_gt),
        "pelvis": st(lambda s: pelvis_position(mesh, s.human_vertices_full)),
        "intent": torch.as_tensor([s.intent_class for s in samples], dtype=torch.long),
    }
