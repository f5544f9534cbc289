import numpy as np
import pytest
import torch

from viforecast.backbone import (PRESETS, CheckpointError, ModelConfig, init_from_pretrained,
                                 init_random, load_checkpoint, parameter_count, patchify,
                                 read_checkpoint, reconstruct, save_checkpoint, sincos_pos_table,
                                 unpatchify)
from viforecast.core import ConfigError

DESK = PRESETS["desk"]
TINY = PRESETS["tiny"]


def right_half_mask(N):
    m = np.zeros((N, N), dtype=bool)
    m[:, N // 2:] = True
    return m


def brute_patchify(img, S):
    W = img.shape[0]
    N = W // S
    rows = []
    for pr in range(N):
        for pc in range(N):
            vec = []
            for i in range(S):
                for j in range(S):
                    for c in range(3):
                        vec.append(img[pr * S + i, pc * S + j, c])
            rows.append(vec)
    return np.array(rows)


@pytest.mark.parametrize("W,S,n,d", [(224, 16, 196, 768), (32, 8, 16, 192)])
def test_patchify_shapes(W, S, n, d):
    img = np.random.default_rng(0).standard_normal((W, W, 3))
    p = patchify(img, S)
    assert p.shape == (n, d)
    assert np.array_equal(unpatchify(p, S), img)


def test_patchify_order_matches_bruteforce():
    img = np.random.default_rng(1).standard_normal((16, 16, 3))
    np.testing.assert_array_equal(patchify(img, 8), brute_patchify(img, 8))
    t = torch.tensor(img)
    assert np.array_equal(patchify(t, 8).numpy(), brute_patchify(img, 8))


def test_patchify_indivisible():
    with pytest.raises(ValueError):
        patchify(np.zeros((30, 30, 3)), 8)


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(W=30, S=8)
    with pytest.raises(ConfigError):
        ModelConfig(enc_dim=30, enc_heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(h=4)


def test_forward_shape():
    model = init_random(DESK)
    imgs = torch.randn(2, 32, 32, 3)
    out = model(imgs, right_half_mask(4))
    assert out.shape == (2, 9, 32, 32, 3)
    with pytest.raises(ValueError):
        model(imgs, np.zeros((3, 3), dtype=bool))


def test_visible_pixels_copied_through():
    model = init_random(DESK)
    img = torch.randn(1, 32, 32, 3)
    out = model(img, right_half_mask(4))
    for k in range(9):
        assert torch.equal(out[0, k, :, :16], img[0, :, :16])


@pytest.mark.parametrize("seed", range(5))
def test_mask_independence(seed):
    g = torch.Generator().manual_seed(seed)
    model = init_random(DESK.replace(seed=seed))
    img = torch.randn(1, 32, 32, 3, generator=g)
    other = img.clone()
    other[:, :, 16:] = torch.randn(1, 32, 16, 3, generator=g) * 50
    with torch.no_grad():
        a = model(img, right_half_mask(4))
        b = model(other, right_half_mask(4))
    assert torch.equal(a[..., 16:, :], b[..., 16:, :])


def test_mask_independence_arbitrary_pattern():
    model = init_random(DESK)
    mask = np.random.default_rng(0).random((4, 4)) < 0.5
    img = torch.randn(1, 32, 32, 3)
    other = img.clone()
    pix = np.kron(mask, np.ones((8, 8), dtype=bool))
    other[0][torch.from_numpy(pix)] = 7.0
    with torch.no_grad():
        a, b = model(img, mask), model(other, mask)
    assert torch.equal(a[0][:, torch.from_numpy(pix)], b[0][:, torch.from_numpy(pix)])


def test_equal_heads_give_equal_outputs():
    model = init_random(DESK)
    with torch.no_grad():
        for head in model.head[1:]:
            head.weight.copy_(model.head[0].weight)
            head.bias.copy_(model.head[0].bias)
        out = model(torch.randn(1, 32, 32, 3), right_half_mask(4))
    for k in range(1, 9):
        assert torch.equal(out[0, k], out[0, 0])


def test_init_determinism():
    a, b = init_random(DESK), init_random(DESK)
    c = init_random(DESK.replace(seed=1))
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert any(not torch.equal(sa[k], sc[k]) for k in sa)
    assert all(torch.all(v == 0) for k, v in sa.items() if k.endswith(".bias"))
    w = sa["enc.0.attn.qkv.weight"]
    assert w.abs().max() <= 0.04 and 0.01 < w.std() < 0.02


def test_forward_determinism():
    model = init_random(DESK)
    img = torch.randn(3, 32, 32, 3)
    with torch.no_grad():
        assert torch.equal(model(img, right_half_mask(4)), model(img, right_half_mask(4)))


def test_base_parameter_count():
    n = parameter_count(init_random(PRESETS["base"]))
    assert abs(n - 112e6) / 112e6 <= 0.05


def test_positional_table():
    t = sincos_pos_table(16, 4)
    assert t.shape == (17, 16)
    assert np.all(t[0] == 0)
    assert np.array_equal(t, sincos_pos_table(16, 4))
    assert np.abs(t).max() <= 1.0


def test_checkpoint_roundtrip(tmp_path):
    model = init_random(DESK)
    save_checkpoint(model, tmp_path / "a.vif", {"r": 0.4})
    save_checkpoint(model, tmp_path / "b.vif", {"r": 0.4})
    assert (tmp_path / "a.vif").read_bytes() == (tmp_path / "b.vif").read_bytes()
    loaded, manifest = load_checkpoint(tmp_path / "a.vif")
    assert manifest["extra"] == {"r": 0.4}
    assert manifest["tensors"]["head.3.weight"]["shape"] == [192, 32]
    sa, sb = model.state_dict(), loaded.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)


def test_checkpoint_unreadable(tmp_path):
    (tmp_path / "junk.vif").write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.vif")


def to_standard_layout(model):
    """Re-express a model in the single-head layout of the public MAE release."""
    c = model.config
    N = c.W // c.S
    out = {}
    for name, v in model.state_dict().items():
        v = v.clone()
        if name.startswith("head."):
            if name.startswith("head.0."):
                out["decoder_pred." + name.split(".", 2)[2]] = v
            continue
        if name == "patch_embed.weight":
            out["patch_embed.proj.weight"] = v.reshape(-1, c.S, c.S, 3).permute(0, 3, 1, 2).contiguous()
            continue
        if name == "patch_embed.bias":
            out["patch_embed.proj.bias"] = v
            continue
        for new, old in (("enc.", "blocks."), ("enc_norm.", "norm."), ("dec_embed.", "decoder_embed."),
                         ("dec.", "decoder_blocks."), ("dec_norm.", "decoder_norm.")):
            if name.startswith(new):
                name = old + name[len(new):]
                break
        out[name] = v
    out["pos_embed"] = torch.zeros(1, 1 + N * N, c.enc_dim)
    out["decoder_pos_embed"] = torch.zeros(1, 1 + N * N, c.dec_dim)
    return out


@pytest.fixture
def pretrained_file(tmp_path):
    source = init_random(TINY.replace(h=1, seed=11))
    path = tmp_path / "mae_pretrain.pth"
    torch.save({"model": to_standard_layout(source)}, path)
    return source, path


def test_init_from_pretrained_copies_head(pretrained_file, tmp_path):
    source, path = pretrained_file
    model = init_from_pretrained(path, TINY)
    sd = model.state_dict()
    for k in range(1, TINY.h):
        assert torch.equal(sd[f"head.{k}.weight"], sd["head.0.weight"])
        assert torch.equal(sd[f"head.{k}.bias"], sd["head.0.bias"])
    src = source.state_dict()
    for name in src:
        assert torch.equal(sd[name], src[name]), name
    # same behaviour as the single-head source on every quantile
    img = torch.randn(1, 16, 16, 3)
    with torch.no_grad():
        a = model(img, right_half_mask(2))
        b = source(img, right_half_mask(2))
    for k in range(TINY.h):
        torch.testing.assert_close(a[0, k], b[0, 0], rtol=0, atol=0)
    save_checkpoint(model, tmp_path / "c.vif")
    _, tensors = read_checkpoint(tmp_path / "c.vif")
    for name, v in sd.items():
        assert np.array_equal(tensors[name], v.numpy())


def test_init_from_pretrained_shape_mismatch(pretrained_file):
    _, path = pretrained_file
    with pytest.raises(CheckpointError, match=r"tensor .* has shape .*config expects"):
        init_from_pretrained(path, TINY.replace(dec_dim=20, dec_heads=2))


def test_init_from_own_single_head_archive(tmp_path):
    src = init_random(TINY.replace(h=1))
    save_checkpoint(src, tmp_path / "one.vif")
    model = init_from_pretrained(tmp_path / "one.vif", TINY)
    assert torch.equal(model.head[2].weight, src.head[0].weight)


def test_reconstruct_wrapper():
    model = init_random(DESK)
    out = reconstruct(model, np.zeros((32, 32, 3)), right_half_mask(4))
    assert out.shape == (9, 32, 32, 3) and out.dtype == np.float64
