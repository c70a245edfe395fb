"""Study-vehicle history encoder: stacked GRU, location attention, DFT embedding."""
from __future__ import annotations

import math

import torch
from torch import nn


def check_finite(x: torch.Tensor, what: str = "input") -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise ValueError(f"non-finite values in {what}")
    return x


def location_attention(z_gru, w0, weight, bias):
    """Re-weight time steps of ``z_gru`` (..., T, D).

    Logits are ``(z_gru * w0) @ weight.T + bias`` per time step; the softmax
    runs over the time axis independently for every feature channel.
    Returns (w1, z_loc).
    """
    logits = (z_gru * w0) @ weight.transpose(-1, -2) + bias
    w1 = torch.softmax(logits, dim=-2)
    return w1, w1 * z_gru


def fft_embed(z: torch.Tensor) -> torch.Tensor:
    """Unnormalized forward DFT along the time axis (dim -2) of a real sequence."""
    if torch.is_complex(z):
        raise TypeError("fft_embed expects a real input")
    return torch.fft.fft(z, dim=-2)


def finalize_encoding(z_fft: torch.Tensor, proj: nn.Linear) -> torch.Tensor:
    return proj(torch.cat([z_fft.real, z_fft.imag], dim=-1))


class HistoryEncoder(nn.Module):
    """Encodes a (B, H, 2) position/speed history into a (B, H, d_model) sequence.

    ``hidden_size`` is the GRU width; ``d_model`` is the output width, which
    the model ties to the future length so one noise scale exists per
    predicted frame.
    """

    def __init__(self, history_frames=30, hidden_size=50, d_model=50, num_layers=2, in_features=2):
        super().__init__()
        self.history_frames = history_frames
        self.gru = nn.GRU(in_features, hidden_size, num_layers=num_layers, batch_first=True)
        self.att_weight = nn.Parameter(torch.empty(hidden_size, hidden_size))
        self.att_bias = nn.Parameter(torch.zeros(hidden_size))
        self.w0 = nn.Parameter(torch.ones(history_frames, hidden_size))
        self.proj = nn.Linear(hidden_size, hidden_size)
        self.fft_proj = nn.Linear(2 * hidden_size, d_model)
        nn.init.kaiming_uniform_(self.att_weight, a=math.sqrt(5))

    def gru_encode(self, history):
        check_finite(history, "history")
        out, _ = self.gru(history)
        return out

    def forward(self, history, return_stages: bool = False):
        z_gru = self.gru_encode(history)
        w1, z_loc = location_attention(z_gru, self.w0, self.att_weight, self.att_bias)
        z_gru_prime = self.proj(z_loc)
        z_fft = fft_embed(z_gru_prime)
        z = finalize_encoding(z_fft, self.fft_proj)
        if return_stages:
            return z, {"z_gru": z_gru, "w1": w1, "z_loc": z_loc, "z_gru_prime": z_gru_prime, "z_fft": z_fft}
        return z


class LinearHistoryEncoder(nn.Module):
    """Ablation stand-in: one affine map per time step, no GRU/attention/DFT."""

    def __init__(self, d_model=50, in_features=2):
        super().__init__()
        self.linear = nn.Linear(in_features, d_model)

    def forward(self, history, return_stages: bool = False):
        check_finite(history, "history")
        z = self.linear(history)
        return (z, {}) if return_stages else z
