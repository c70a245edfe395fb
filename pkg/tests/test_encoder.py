import math

import numpy as np
import pytest
import torch
from torch import nn

from _fd import fd_relative_errors
from crossfusor.encoder import HistoryEncoder, LinearHistoryEncoder, fft_embed, finalize_encoding, location_attention


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def direct_dft(x):
    """O(N^2) DFT along axis 0 with the negative-exponent, unnormalized convention."""
    N = x.shape[0]
    n = np.arange(N)
    basis = np.exp(-2j * np.pi * np.outer(n, n) / N)
    return basis @ x


class TestGRU:
    def test_zero_weights_zero_input(self):
        enc = HistoryEncoder().double()
        for p in enc.gru.parameters():
            nn.init.zeros_(p)
        out = enc.gru_encode(torch.zeros(2, 30, 2, dtype=torch.float64))
        assert out.shape == (2, 30, 50)
        assert torch.count_nonzero(out) == 0

    def test_single_cell_matches_hand_computed(self):
        enc = HistoryEncoder(history_frames=1, hidden_size=1, d_model=1, num_layers=1, in_features=1).double()
        g = enc.gru
        # gate order in the stacked weights: reset, update, new
        w_ih, w_hh, b_ih, b_hh = [0.5, -0.3, 0.8], [0.2, 0.4, -0.6], [0.1, 0.05, -0.2], [-0.15, 0.3, 0.25]
        with torch.no_grad():
            g.weight_ih_l0.copy_(torch.tensor(w_ih, dtype=torch.float64).reshape(3, 1))
            g.weight_hh_l0.copy_(torch.tensor(w_hh, dtype=torch.float64).reshape(3, 1))
            g.bias_ih_l0.copy_(torch.tensor(b_ih, dtype=torch.float64))
            g.bias_hh_l0.copy_(torch.tensor(b_hh, dtype=torch.float64))
        x, h0 = 1.7, 0.0
        r = sigmoid(w_ih[0] * x + b_ih[0] + w_hh[0] * h0 + b_hh[0])
        z = sigmoid(w_ih[1] * x + b_ih[1] + w_hh[1] * h0 + b_hh[1])
        n = math.tanh(w_ih[2] * x + b_ih[2] + r * (w_hh[2] * h0 + b_hh[2]))
        expected = (1 - z) * n + z * h0
        got = enc.gru_encode(torch.tensor([[[x]]], dtype=torch.float64)).item()
        assert abs(got - expected) < 1e-10

    def test_batch_permutation_equivariance(self):
        torch.manual_seed(0)
        enc = HistoryEncoder().double()
        x = torch.randn(5, 30, 2, dtype=torch.float64)
        perm = torch.tensor([3, 0, 4, 1, 2])
        assert torch.equal(enc(x)[perm], enc(x[perm]))

    def test_non_finite_rejected(self):
        enc = HistoryEncoder().double()
        x = torch.zeros(1, 30, 2, dtype=torch.float64)
        x[0, 3, 1] = float("nan")
        with pytest.raises(ValueError):
            enc(x)


class TestLocationAttention:
    def test_zero_logits_are_uniform(self):
        z = torch.randn(2, 30, 50, dtype=torch.float64)
        w1, z_loc = location_attention(z, torch.ones(30, 50, dtype=torch.float64),
                                       torch.zeros(50, 50, dtype=torch.float64),
                                       torch.zeros(50, dtype=torch.float64))
        assert torch.allclose(w1, torch.full_like(w1, 1 / 30), rtol=0, atol=1e-15)
        assert torch.allclose(z_loc, z / 30, rtol=0, atol=1e-15)

    def test_shift_invariance_per_channel(self):
        torch.manual_seed(1)
        z = torch.randn(30, 50, dtype=torch.float64)
        w0 = torch.rand(30, 50, dtype=torch.float64)
        W = torch.randn(50, 50, dtype=torch.float64)
        b = torch.randn(50, dtype=torch.float64)
        w1, _ = location_attention(z, w0, W, b)
        b2 = b.clone()
        b2[7] += 3.5   # shifts every logit of channel 7 by the same constant
        w1b, _ = location_attention(z, w0, W, b2)
        assert torch.allclose(w1, w1b, rtol=0, atol=1e-12)

    def test_random_toy_case_vs_oracle(self):
        rng = np.random.default_rng(2)
        z, w0 = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        W, b = rng.normal(size=(3, 3)), rng.normal(size=3)
        logits = np.empty((4, 3))
        for t in range(4):
            for d in range(3):
                logits[t, d] = sum(W[d, e] * z[t, e] * w0[t, e] for e in range(3)) + b[d]
        w1 = np.exp(logits) / np.exp(logits).sum(axis=0, keepdims=True)
        t = lambda a: torch.tensor(a, dtype=torch.float64)
        got_w1, got_loc = location_attention(t(z), t(w0), t(W), t(b))
        assert np.max(np.abs(got_w1.numpy() - w1)) < 1e-12
        assert np.max(np.abs(got_loc.numpy() - w1 * z)) < 1e-12

    def test_weights_normalized(self):
        torch.manual_seed(3)
        enc = HistoryEncoder().double()
        _, stages = enc(torch.randn(3, 30, 2, dtype=torch.float64), return_stages=True)
        w1 = stages["w1"]
        assert torch.all(w1 >= 0)
        assert torch.allclose(w1.sum(dim=1), torch.ones(3, 50, dtype=torch.float64), atol=1e-6)


class TestProjection:
    def test_identity(self):
        enc = HistoryEncoder().double()
        with torch.no_grad():
            enc.proj.weight.copy_(torch.eye(50))
            enc.proj.bias.zero_()
        z = torch.randn(30, 50, dtype=torch.float64)
        assert torch.equal(enc.proj(z), z)

    def test_zero_weights_bias_rows(self):
        enc = HistoryEncoder().double()
        beta = torch.randn(50, dtype=torch.float64)
        with torch.no_grad():
            enc.proj.weight.zero_()
            enc.proj.bias.copy_(beta)
        out = enc.proj(torch.randn(30, 50, dtype=torch.float64))
        assert torch.equal(out, beta.expand(30, 50))

    def test_random_vs_matmul(self):
        rng = np.random.default_rng(4)
        enc = HistoryEncoder().double()
        z = rng.normal(size=(30, 50))
        W = enc.proj.weight.detach().numpy()
        b = enc.proj.bias.detach().numpy()
        got = enc.proj(torch.tensor(z)).detach().numpy()
        assert np.max(np.abs(got - (z @ W.T + b))) < 1e-12


class TestFFT:
    def test_constant_sequence(self):
        c = 2.75
        out = fft_embed(torch.full((30, 50), c, dtype=torch.float64))
        assert torch.allclose(out[0], torch.full((50,), 30 * c, dtype=torch.complex128), atol=1e-9)
        assert out[1:].abs().max() < 1e-9

    def test_impulse(self):
        x = torch.zeros(30, 50, dtype=torch.float64)
        x[0] = 1.0
        out = fft_embed(x)
        assert (out - 1).abs().max() < 1e-9

    def test_matches_direct_dft(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(30, 50))
        out = fft_embed(torch.tensor(x)).numpy()
        assert np.max(np.abs(out - direct_dft(x))) < 1e-9

    def test_parseval_and_conjugate_symmetry(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(30, 50))
        out = fft_embed(torch.tensor(x)).numpy()
        N = 30
        energy = np.sum(np.abs(out) ** 2)
        assert abs(energy - N * np.sum(x ** 2)) / energy < 1e-6
        for i in range(1, N):
            assert np.max(np.abs(out[i] - np.conj(out[N - i]))) < 1e-9

    def test_rejects_complex(self):
        with pytest.raises(TypeError):
            fft_embed(torch.zeros(30, 2, dtype=torch.complex128))


class TestFinalize:
    def test_zero_spectrum_gives_bias(self):
        proj = nn.Linear(100, 50).double()
        out = finalize_encoding(torch.zeros(30, 50, dtype=torch.complex128), proj)
        assert torch.equal(out, proj.bias.detach().expand(30, 50))

    def test_imag_selector_on_real_spectrum(self):
        proj = nn.Linear(100, 50).double()
        with torch.no_grad():
            proj.weight.zero_()
            proj.weight[:, 50:] = torch.randn(50, 50, dtype=torch.float64)
            proj.bias.zero_()
        spec = torch.complex(torch.randn(30, 50, dtype=torch.float64), torch.zeros(30, 50, dtype=torch.float64))
        assert torch.count_nonzero(finalize_encoding(spec, proj)) == 0

    def test_random_vs_concat_matmul(self):
        rng = np.random.default_rng(7)
        proj = nn.Linear(100, 50).double()
        spec = rng.normal(size=(30, 50)) + 1j * rng.normal(size=(30, 50))
        W, b = proj.weight.detach().numpy(), proj.bias.detach().numpy()
        expected = np.concatenate([spec.real, spec.imag], axis=1) @ W.T + b
        got = finalize_encoding(torch.tensor(spec), proj).detach().numpy()
        assert np.max(np.abs(got - expected)) < 1e-12


def test_shapes_and_stages():
    enc = HistoryEncoder().double()
    z, st = enc(torch.randn(2, 30, 2, dtype=torch.float64), return_stages=True)
    assert z.shape == (2, 30, 50)
    for key in ("z_gru", "z_loc", "z_gru_prime", "z_fft"):
        assert st[key].shape == (2, 30, 50)
    assert torch.all(enc.w0 == 1)


def test_linear_ablation_encoder():
    enc = LinearHistoryEncoder(50).double()
    x = torch.randn(3, 30, 2, dtype=torch.float64)
    assert enc(x).shape == (3, 30, 50)


def test_end_to_end_gradient_matches_finite_differences():
    torch.manual_seed(8)
    enc = HistoryEncoder(history_frames=4, hidden_size=3, d_model=3).double()
    with torch.no_grad():
        enc.w0.add_(0.3 * torch.randn_like(enc.w0))
    x = torch.randn(2, 4, 2, dtype=torch.float64)
    errs = fd_relative_errors(enc, lambda: torch.sin(enc(x)).sum())
    assert set(errs) >= {"att_weight", "att_bias", "w0", "proj.weight", "fft_proj.weight", "gru.weight_hh_l1"}
    assert max(errs.values()) < 1e-4, errs
