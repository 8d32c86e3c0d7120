import numpy as np
import pytest
import torch
import torch.nn.functional as F

from issc.channel import awgn_transmit
from issc.config import ConfigError, ModelConfig
from issc.decoder import FeatureDecoder, IsscModel, Reconstructor, argmax_mask, build_model
from issc.encoder import power_normalize

torch.set_num_threads(2)


def small_config(k=8, n_cls=4):
    return ModelConfig(height=64, width=64, embed_dim=8, depths=(2, 2, 2, 2),
                       num_heads=(1, 1, 2, 2), window_size=4, mlp_ratio=2.0,
                       k=k, n_cls=n_cls)


def test_identity_decoder_passthrough():
    dec = FeatureDecoder(small_config(), activation=None)
    with torch.no_grad():
        for conv in (dec.conv1, dec.conv2, dec.conv3):
            conv.weight.copy_(torch.eye(8))
            conv.bias.zero_()
    y = torch.randn(1, 4, 4, 8)
    assert torch.allclose(dec(y), y, atol=1e-6)


def test_zero_weights_constant_bias_output():
    dec = FeatureDecoder(small_config(), activation=None)
    with torch.no_grad():
        for conv in (dec.conv1, dec.conv2, dec.conv3):
            conv.weight.zero_()
            conv.bias.zero_()
        dec.conv3.bias.fill_(0.25)
    out = dec(torch.randn(2, 4, 4, 8))
    assert torch.allclose(out, torch.full_like(out, 0.25))


def test_decoder_matches_per_pixel_oracle():
    torch.manual_seed(0)
    dec = FeatureDecoder(small_config()).double()
    y = torch.randn(1, 4, 4, 8, dtype=torch.float64)
    out = dec(y).detach().numpy()

    def gelu(v):
        from scipy.stats import norm

        return v * norm.cdf(v)

    ws = [(c.weight.detach().numpy().T, c.bias.detach().numpy())
          for c in (dec.conv1, dec.conv2, dec.conv3)]
    for i in range(4):
        for j in range(4):
            v = y[0, i, j].numpy()
            v = gelu(v @ ws[0][0] + ws[0][1])
            v = gelu(v @ ws[1][0] + ws[1][1])
            v = v @ ws[2][0] + ws[2][1]
            assert np.allclose(out[0, i, j], v, atol=1e-7)


def test_decoder_rejects_wrong_channels():
    dec = FeatureDecoder(small_config(k=8))
    with pytest.raises(ConfigError, match="channels"):
        dec(torch.randn(1, 4, 4, 5))


def test_reconstructor_upsamples_16x():
    torch.manual_seed(1)
    recon = Reconstructor(small_config())
    probs = recon(torch.randn(2, 4, 4, 8))
    assert probs.shape == (2, 64, 64, 4)


def test_zero_logits_uniform_probabilities():
    recon = Reconstructor(small_config(n_cls=5), activation=None)
    with torch.no_grad():
        recon.conv_in.weight.zero_()
        recon.conv_in.bias.zero_()
        recon.conv_out.weight.zero_()
        recon.conv_out.bias.zero_()
    probs = recon(torch.randn(1, 4, 4, 8))
    assert torch.allclose(probs, torch.full_like(probs, 0.2), atol=1e-7)


def test_probabilities_sum_to_one():
    torch.manual_seed(2)
    recon = Reconstructor(small_config())
    probs = recon(torch.randn(1, 4, 4, 8) * 10)
    sums = probs.sum(dim=-1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)


def test_argmax_one_hot_recovery():
    probs = np.zeros((1, 2, 2, 4))
    classes = np.array([[0, 3], [2, 1]])
    for i in range(2):
        for j in range(2):
            probs[0, i, j, classes[i, j]] = 1.0
    assert (argmax_mask(probs)[0] == classes).all()


def test_argmax_tie_breaks_low_index():
    probs = np.full((1, 1, 1, 5), 0.2)
    assert argmax_mask(probs)[0, 0, 0] == 0


def test_argmax_matches_scan_oracle():
    rng = np.random.default_rng(3)
    probs = rng.random((2, 5, 5, 6))
    mask = argmax_mask(probs)
    for b in range(2):
        for i in range(5):
            for j in range(5):
                best, best_p = 0, probs[b, i, j, 0]
                for c in range(1, 6):
                    if probs[b, i, j, c] > best_p:
                        best, best_p = c, probs[b, i, j, c]
                assert mask[b, i, j] == best


def test_forward_mask_shape_and_purity():
    cfg = small_config()
    model = build_model(cfg, seed=4)
    img = torch.rand(2, 64, 64, 3)
    p1, m1 = model.predict(img, snr_db=None)
    p2, m2 = model.predict(img, snr_db=None)
    assert m1.shape == (2, 64, 64)
    assert torch.equal(p1, p2)
    assert (m1 == m2).all()


def test_forward_equals_manual_composition_noiseless():
    cfg = small_config()
    model = build_model(cfg, seed=5)
    img = torch.rand(1, 64, 64, 3)
    with torch.no_grad():
        probs = model(img, snr_db=None)
        x = model.encode(img)
        x_hat, scale = power_normalize(x)
        y = x_hat * scale
        manual = model.reconstructor(model.feature_decoder(y))
    assert torch.allclose(probs, manual, atol=1e-7)


def test_forward_equals_manual_composition_with_channel():
    cfg = small_config()
    model = build_model(cfg, seed=6)
    img = torch.rand(1, 64, 64, 3)
    with torch.no_grad():
        probs = model(img, snr_db=7.0, noise_seed=99)
        x = model.encode(img)
        x_hat, scale = power_normalize(x)
        y = awgn_transmit(x_hat, 7.0, seed=99) * scale
        manual = model.reconstructor(model.feature_decoder(y))
    assert torch.allclose(probs, manual, atol=1e-7)


def test_every_parameter_group_receives_gradient():
    cfg = small_config()
    model = build_model(cfg, seed=7)
    img = torch.rand(2, 64, 64, 3)
    labels = torch.randint(0, cfg.n_cls, (2, 64, 64))
    from issc.training import batch_loss

    probs = model(img, snr_db=5.0, noise_seed=1)
    loss = batch_loss(probs, labels)
    loss.backward()
    for name, p in model.named_parameters():
        assert p.grad is not None, name
        assert p.grad.abs().sum() > 0, f"dead branch: {name}"
