import json

import numpy as np
import pytest
import torch

from hoirel.attention import CrossAttentionBlock
from hoirel.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from hoirel.config import ModelConfig
from hoirel.model import InteractionModel, ModelError, cosine_similarity, make_batch
from hoirel.template import humanoid_template


@pytest.fixture(scope="module")
def model(desk_mesh):
    torch.manual_seed(0)
    return InteractionModel(ModelConfig(), desk_mesh).double().eval()


@pytest.fixture(scope="module")
def batch(samples, desk_mesh):
    return make_batch(samples[:2], desk_mesh, torch.float64)


def test_phi_extremes_and_scale_invariance():
    a = torch.randn(5, 16, dtype=torch.float64)
    b = torch.randn(5, 16, dtype=torch.float64)
    assert torch.allclose(cosine_similarity(a, a), torch.ones(5, dtype=torch.float64))
    assert torch.allclose(cosine_similarity(a, -a), -torch.ones(5, dtype=torch.float64))
    e0, e1 = torch.eye(16, dtype=torch.float64)[:2]
    assert cosine_similarity(e0, e1) == 0
    assert torch.allclose(cosine_similarity(3.0 * a, 0.2 * b), cosine_similarity(a, b), atol=1e-6)
    assert torch.all(cosine_similarity(a, b).abs() <= 1)


def test_desk_forward_shapes(model, batch):
    res = model(batch)
    cfg = model.cfg
    c, no, nh = cfg.channels, cfg.n_object, cfg.n_human_sampled
    assert res.bundle.F_i.shape == (2, c, cfg.image_tokens)
    assert res.intention.F_to.shape == (2, c, no + 1)
    assert res.intention.F_th_bar.shape == (2, c, nh + 1)
    assert res.correlation.phi_a.shape == (2, c, no)
    assert res.correlation.phi_c.shape == (2, c, nh)
    assert res.spatial.phi_p.shape == (2, c, 3)
    assert res.elements.contact.shape == (2, cfg.n_human_full)
    assert res.elements.affordance.shape == (2, no)
    assert res.elements.center.shape == (2, 3)
    assert res.elements.intent_logits.shape == (2, cfg.n_classes)
    for t in (res.elements.contact, res.elements.affordance):
        assert torch.all((t > 0) & (t < 1))
    assert torch.all(res.intention.phi.abs() <= 1)


def test_spatial_sequence_lengths(model, batch):
    w = model(batch).attention["f_rho"]
    assert w.shape[-2:] == (5, model.cfg.n_human_sampled + 2)


def test_attention_rows_sum_to_one(model, batch):
    for name, w in model(batch).attention.items():
        assert torch.allclose(w.sum(-1), torch.ones_like(w.sum(-1)), atol=1e-6), name


def test_forward_deterministic(desk_mesh, batch):
    outs = []
    for _ in range(2):
        torch.manual_seed(7)
        m = InteractionModel(ModelConfig(), desk_mesh).double()
        outs.append(m(batch).elements)
    for f in ("contact", "affordance", "center", "intent_logits"):
        assert torch.equal(getattr(outs[0], f), getattr(outs[1], f))


def test_forward_does_not_mutate_parameters(model, batch):
    before = {k: v.clone() for k, v in model.state_dict().items()}
    model(batch)
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_object_permutation(model, batch):
    perm = torch.randperm(model.cfg.n_object, generator=torch.Generator().manual_seed(1))
    b2 = dict(batch)
    b2["object_points"] = batch["object_points"][:, perm]
    b2["object_curvature"] = batch["object_curvature"][:, perm]
    a, b = model(batch).elements, model(b2).elements
    assert torch.allclose(a.affordance[:, perm], b.affordance, atol=1e-10)
    assert torch.allclose(a.contact, b.contact, atol=1e-10)
    assert torch.allclose(a.center, b.center, atol=1e-10)


def test_residual_identity_through_f_theta(desk_mesh, batch):
    torch.manual_seed(0)
    m = InteractionModel(ModelConfig(), desk_mesh).double()
    with torch.no_grad():
        for p in (m.f_theta.v_proj.weight, m.f_theta.v_proj.bias, m.f_theta.out_proj.bias,
                  m.f_theta.ffn.fc2.weight, m.f_theta.ffn.fc2.bias):
            p.zero_()
    res = m(batch)
    assert torch.equal(res.correlation.phi_a, res.correlation.F_co_bar)
    assert torch.equal(res.correlation.phi_c, res.correlation.F_ch_bar)


def _layer_norm(x, ln):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + ln.eps) * ln.weight.detach().numpy() + ln.bias.detach().numpy()


def test_single_head_attention_oracle():
    torch.manual_seed(5)
    blk = CrossAttentionBlock(4, 1, ffn=False).double()
    x = torch.randn(1, 4, 4, dtype=torch.float64)
    ctx = torch.randn(1, 5, 4, dtype=torch.float64)
    out, w = blk(x, ctx)

    def lin(layer, v):
        return v @ layer.weight.detach().numpy().T + layer.bias.detach().numpy()

    xn, cn = x[0].numpy(), ctx[0].numpy()
    q = lin(blk.q_proj, _layer_norm(xn, blk.q_norm))
    k = lin(blk.k_proj, _layer_norm(cn, blk.kv_norm))
    v = lin(blk.v_proj, _layer_norm(cn, blk.kv_norm))
    s = q @ k.T / 2.0
    a = np.exp(s - s.max(1, keepdims=True))
    a /= a.sum(1, keepdims=True)
    expected = xn + lin(blk.out_proj, a @ v)
    assert np.allclose(w[0, 0].detach().numpy(), a, atol=1e-6)
    assert np.allclose(out[0].detach().numpy(), expected, atol=1e-6)


def test_zero_pe_changes_phi_p(desk_mesh, batch):
    torch.manual_seed(2)
    m = InteractionModel(ModelConfig(), desk_mesh).double()
    opt = torch.optim.Adam(m.parameters(), lr=1e-2)
    for _ in range(3):
        opt.zero_grad()
        m(batch).elements.center.square().sum().backward()
        opt.step()
    with torch.no_grad():
        a = m(batch).spatial.phi_p
        m.pe.zero_()
        b = m(batch).spatial.phi_p
    assert not torch.allclose(a, b)


def test_zero_pre_activations_give_half(desk_mesh, batch):
    m = InteractionModel(ModelConfig(), desk_mesh).double()
    with torch.no_grad():
        for head in (m.contact_head, m.affordance_head):
            head.fc2.weight.zero_()
            head.fc2.bias.zero_()
        m.contact_up.bias.zero_()
    el = m(batch).elements
    assert torch.all(el.contact == 0.5) and torch.all(el.affordance == 0.5)


def test_contact_up_initialisation(desk_mesh):
    m = InteractionModel(ModelConfig(), desk_mesh)
    w = m.contact_up.weight.detach().numpy()
    assert np.allclose(w.sum(1), 1, atol=1e-6)
    with pytest.raises(ModelError):
        m.init_contact_up(humanoid_template("desk", 60))


def test_curvature_length_mismatch(model, batch):
    b2 = dict(batch)
    b2["object_curvature"] = batch["object_curvature"][:, :-1]
    with pytest.raises(ModelError):
        model(b2)


# --- checkpoints ---------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, desk_mesh, samples):
    torch.manual_seed(0)
    m = InteractionModel(ModelConfig(), desk_mesh).eval()
    b = make_batch(samples[:2], desk_mesh)
    save_checkpoint(m, tmp_path / "ck")
    m2, manifest = load_checkpoint(tmp_path / "ck", ModelConfig())
    m2.eval()
    a, c = m(b).elements, m2(b).elements
    assert torch.equal(a.contact, c.contact) and torch.equal(a.center, c.center)
    entry = manifest["tensors"][0]
    raw = (tmp_path / "ck" / entry["file"]).read_bytes()
    assert len(raw) == 4 * int(np.prod(entry["shape"]))


def test_checkpoint_validation(tmp_path, desk_mesh):
    m = InteractionModel(ModelConfig(), desk_mesh)
    d = tmp_path / "ck"
    save_checkpoint(m, d)
    with pytest.raises(CheckpointError):
        load_checkpoint(d, ModelConfig(channels=32))
    manifest = json.loads((d / "manifest.json").read_text())
    f = d / manifest["tensors"][0]["file"]
    f.write_bytes(f.read_bytes()[:-4])
    with pytest.raises(CheckpointError, match="expected"):
        load_checkpoint(d)
