import numpy as np
import pytest
import torch

from hoirel.encoders import EdgeConv, EncoderError, ImageEncoder, PointEncoder, knn_indices
from hoirel.trainer import rel_error


def fd_max_rel_error(module, f, n_params=40, h=1e-6, seed=0):
    module.double()
    params = list(module.parameters())
    module.zero_grad()
    f().backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(n_params):
            p = params[rng.integers(len(params))]
            j = int(rng.integers(p.numel()))
            flat = p.view(-1)
            old = float(flat[j])
            flat[j] = old + h
            up = float(f())
            flat[j] = old - h
            down = float(f())
            flat[j] = old
            worst = max(worst, rel_error(float(p.grad.view(-1)[j]), (up - down) / (2 * h)))
    return worst


def test_image_encoder_shape_and_zero_input():
    torch.manual_seed(0)
    enc = ImageEncoder([8, 8, 8, 8], 16, 64)
    with torch.no_grad():
        enc.proj.bias.zero_()
    z = torch.zeros(2, 64, 64)
    out = enc(torch.zeros(2, 64, 64, 3), z, z)
    assert out.shape == (2, 16, 16)
    assert torch.isfinite(out).all()


def test_image_encoder_sees_object_region():
    torch.manual_seed(1)
    enc = ImageEncoder([8, 8], 8, 16)
    img = torch.rand(1, 16, 16, 3)
    obj = torch.zeros(1, 16, 16)
    obj[:, 4:8, 4:8] = 1
    img2 = img.clone()
    img2[:, 4:8, 4:8] += 0.3
    hm = torch.zeros(1, 16, 16)
    assert not torch.equal(enc(img, hm, obj), enc(img2, hm, obj))


def test_image_encoder_rejects_wrong_size():
    enc = ImageEncoder([8, 8], 8, 16)
    with pytest.raises(EncoderError):
        enc(torch.zeros(1, 16, 12, 3), torch.zeros(1, 16, 12), torch.zeros(1, 16, 12))


def test_point_encoder_shape_and_min_points():
    enc = PointEncoder([8, 8], 12, k=5)
    assert enc(torch.rand(3, 40, 3)).shape == (3, 12, 40)
    with pytest.raises(EncoderError):
        enc(torch.rand(1, 5, 3))


def test_point_encoder_permutation_equivariant():
    torch.manual_seed(2)
    enc = PointEncoder([16, 16, 32], 24, k=8).double()
    pts = torch.rand(1, 64, 3, dtype=torch.float64)
    perm = torch.randperm(64)
    a = enc(pts)
    b = enc(pts[:, perm])
    assert torch.equal(a[:, :, perm], b)


def test_edgeconv_hand_oracle():
    # identity weights on 1-d features: output_i = max_j leaky([x_i, x_j - x_i])
    layer = EdgeConv(1, 2, k=2).double()
    with torch.no_grad():
        layer.lin.weight.copy_(torch.eye(2).view(2, 2, 1, 1))
        layer.lin.bias.zero_()
    x = torch.tensor([[[0.0, 1.0, 3.0, 6.0, 10.0]]], dtype=torch.float64)
    out = layer(x)[0]
    vals = x[0, 0].tolist()
    expected = np.zeros((2, 5))
    for i, xi in enumerate(vals):
        d = sorted(((abs(xj - xi), j) for j, xj in enumerate(vals) if j != i))[:2]
        feats = [[xi, vals[j] - xi] for _, j in d]
        leaky = [[v if v > 0 else 0.2 * v for v in f] for f in feats]
        expected[:, i] = np.max(leaky, axis=0)
    assert np.allclose(out.detach().numpy(), expected, atol=1e-6)


def test_knn_indices_tie_break():
    x = torch.tensor([[[0.0, 1.0, -1.0, 2.0]]])
    assert knn_indices(x, 2)[0, 0].tolist() == [1, 2]


def test_point_encoder_gradients():
    torch.manual_seed(3)
    enc = PointEncoder([6, 6], 5, k=4)
    pts = torch.rand(2, 16, 3, dtype=torch.float64)
    assert fd_max_rel_error(enc, lambda: enc.double()(pts).sum()) < 1e-4


def test_image_encoder_gradients():
    torch.manual_seed(4)
    enc = ImageEncoder([4, 6], 5, 8)
    img = torch.rand(2, 8, 8, 3, dtype=torch.float64)
    m = (torch.rand(2, 8, 8) > 0.5).double()
    assert fd_max_rel_error(enc, lambda: enc(img, m, 1 - m).sum()) < 1e-4
