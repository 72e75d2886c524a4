import math

import numpy as np
import pytest
import torch

from haap.encoder import (
    BadDimensions,
    EncoderBlock,
    EncoderConfig,
    ShapeMismatch,
    VisionEncoder,
    embed,
    patchify,
    unpatchify,
)
from haap.layers import MultiHeadAttention


def test_patch_count_default():
    img = torch.rand(32, 128, 3)
    assert patchify(img).shape == (128, 4 * 8 * 3)


def test_patch_rows_are_raster_flattened():
    img = torch.arange(32 * 128 * 3, dtype=torch.float64).reshape(32, 128, 3)
    patches = patchify(img)
    # patch k = (row k // 16, col k % 16); inside a patch pixels are row-major then channel
    k = 37
    r, c = divmod(k, 16)
    expected = img[r * 4:(r + 1) * 4, c * 8:(c + 1) * 8, :].reshape(-1)
    assert torch.equal(patches[k], expected)


def test_constant_image():
    patches = patchify(torch.full((32, 128, 3), 0.25))
    assert torch.all(patches == 0.25)


def test_unpatchify_round_trip():
    img = torch.rand(5, 32, 128, 3, generator=torch.Generator().manual_seed(0))
    assert torch.equal(unpatchify(patchify(img)), img)


def test_bad_dimensions():
    with pytest.raises(BadDimensions):
        patchify(torch.rand(30, 128, 3))
    with pytest.raises(BadDimensions):
        EncoderConfig(image_h=30)


def test_embed_cases():
    g = torch.Generator().manual_seed(1)
    patches = torch.rand(128, 96, generator=g, dtype=torch.float64)
    E = torch.rand(96, 16, generator=g, dtype=torch.float64)
    E_pos = torch.rand(128, 16, generator=g, dtype=torch.float64)
    assert torch.equal(embed(patches, torch.zeros_like(E), E_pos), E_pos)
    eye_patches = torch.eye(128, 96, dtype=torch.float64)
    assert torch.equal(embed(eye_patches, E, torch.zeros_like(E_pos)), eye_patches @ E)
    expected = np.einsum("np,pd->nd", patches.numpy(), E.numpy()) + E_pos.numpy()
    np.testing.assert_allclose(embed(patches, E, E_pos).numpy(), expected, atol=1e-12, rtol=0)
    with pytest.raises(ShapeMismatch):
        embed(patches, E[:10], E_pos)


def _zero_outputs(block):
    for lin in (block.attn.out, block.mlp.fc2):
        torch.nn.init.zeros_(lin.weight)
        torch.nn.init.zeros_(lin.bias)


def test_block_identity_with_zero_output_projections():
    block = EncoderBlock(16, 2, 4.0, 0.0).double()
    _zero_outputs(block)
    z = torch.randn(3, 10, 16, dtype=torch.float64)
    assert torch.equal(block(z), z)


def test_block_matches_pre_norm_formula():
    torch.manual_seed(0)
    block = EncoderBlock(16, 2, 2.0, 0.0).double().eval()
    z = torch.randn(2, 7, 16, dtype=torch.float64)
    h = block.norm1(z)
    z1 = block.attn(h, h) + z
    expected = block.mlp(block.norm2(z1)) + z1
    torch.testing.assert_close(block(z), expected, atol=1e-12, rtol=0)


def test_single_head_attention_oracle():
    torch.manual_seed(3)
    mha = MultiHeadAttention(8, 1).double()
    x = torch.randn(1, 4, 8, dtype=torch.float64)
    got = mha(x, x)[0].detach().numpy()
    W = {n: (getattr(mha, n).weight.detach().numpy(), getattr(mha, n).bias.detach().numpy()) for n in ("q", "k", "v", "out")}
    xs = x[0].numpy()
    q, k, v = (xs @ W[n][0].T + W[n][1] for n in ("q", "k", "v"))
    expected = np.zeros((4, 8))
    for i in range(4):
        s = np.array([q[i] @ k[j] / math.sqrt(8) for j in range(4)])
        w = np.exp(s - s.max())
        w /= w.sum()
        expected[i] = sum(w[j] * v[j] for j in range(4))
    expected = expected @ W["out"][0].T + W["out"][1]
    np.testing.assert_allclose(got, expected, atol=1e-10, rtol=0)


def test_attention_rows_are_convex():
    mha = MultiHeadAttention(16, 4)
    mha.keep_weights = True
    x = torch.randn(2, 9, 16)
    mha(x, x)
    w = mha.last_weights
    assert (w >= 0).all()
    torch.testing.assert_close(w.sum(-1), torch.ones_like(w.sum(-1)), atol=1e-6, rtol=0)


def small_encoder(layers=1):
    cfg = EncoderConfig(layers=layers, width=16, heads=2, mlp_ratio=2.0, dropout=0.1, image_h=8, image_w=16)
    torch.manual_seed(0)
    return VisionEncoder(cfg).double()


def test_encoder_shape_contract_default():
    enc = VisionEncoder(EncoderConfig(layers=1, width=32, heads=2))
    out = enc(torch.rand(2, 32, 128, 3))
    assert out.shape == (2, 129, 32)


def test_zero_layers_is_layer_norm_of_embedding():
    enc = small_encoder(layers=0).eval()
    img = torch.rand(2, 8, 16, 3, dtype=torch.float64)
    z0 = torch.cat([enc.register_token.expand(2, -1, -1), enc.patch_proj(patchify(img))], 1) + enc.pos_embed
    torch.testing.assert_close(enc(img), enc.norm(z0))


def test_eval_determinism_and_batch_independence():
    enc = small_encoder(layers=2).eval()
    img = torch.rand(4, 8, 16, 3, dtype=torch.float64)
    a = enc(img)
    torch.testing.assert_close(enc(img[[0, 0]])[0], enc(img[[0, 0]])[1], atol=0, rtol=0)
    perm = torch.tensor([2, 0, 3, 1])
    torch.testing.assert_close(enc(img[perm]), a[perm], atol=1e-12, rtol=0)


def test_gradient_wrt_patch_projection_finite_difference():
    enc = small_encoder(layers=1).eval()
    img = torch.rand(2, 8, 16, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(4))
    W = enc.patch_proj.weight
    loss = enc(img).pow(2).mean()
    grad = torch.autograd.grad(loss, W)[0]
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(10):
        i, j = int(rng.integers(W.shape[0])), int(rng.integers(W.shape[1]))
        with torch.no_grad():
            old = W[i, j].item()
            W[i, j] = old + h
            up = enc(img).pow(2).mean().item()
            W[i, j] = old - h
            down = enc(img).pow(2).mean().item()
            W[i, j] = old
        numeric = (up - down) / (2 * h)
        assert abs(numeric - grad[i, j].item()) <= 1e-3 * max(abs(numeric), 1e-8) + 1e-10
