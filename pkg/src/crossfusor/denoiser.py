"""1-D U-Net noise predictor conditioned on diffusion step and platoon context."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def sinusoidal_embedding(k, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Interleaved sin/cos features of the step index at geometric frequencies."""
    k = torch.as_tensor(k, dtype=torch.float64).reshape(-1)
    half = (dim + 1) // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = k[:, None] * freqs[None]
    emb = torch.stack([torch.sin(args), torch.cos(args)], dim=-1).flatten(-2)
    return emb[:, :dim]


def pool_context(c: torch.Tensor) -> torch.Tensor:
    """Mean over the time axis of a (..., T, d) context."""
    return c.mean(dim=-2)


class ModulatedBlock(nn.Module):
    """conv -> FiLM(scale, shift) -> SiLU -> conv -> SiLU, with a residual path."""

    def __init__(self, in_ch, out_ch, cond_dim):
        super().__init__()
        self.conv1 = nn.Conv1d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv1d(out_ch, out_ch, 3, padding=1)
        self.film = nn.Linear(cond_dim, 2 * out_ch)
        self.skip = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, cond):
        scale, shift = self.film(cond).unsqueeze(-1).chunk(2, dim=1)
        h = F.silu(self.conv1(x) * (1 + scale) + shift)
        h = F.silu(self.conv2(h))
        return h + self.skip(x)


class UNet1D(nn.Module):
    """Predicts scaled noise for a length-``seq_len`` single-channel signal.

    Down path widths ``channels``; each down transition is a stride-2
    convolution (length L -> ceil(L / 2)). The up path mirrors it with
    nearest-neighbour upsampling cropped to the skip length.
    """

    def __init__(self, seq_len=50, channels=(8, 16, 32, 64, 128), d_context=50, emb_dim=50):
        super().__init__()
        self.seq_len = seq_len
        self.channels = tuple(channels)
        self.emb_dim = emb_dim
        cond_dim = emb_dim
        self.step_mlp = nn.Sequential(nn.Linear(emb_dim, cond_dim), nn.SiLU(), nn.Linear(cond_dim, cond_dim))
        self.context_proj = nn.Linear(d_context, cond_dim)

        self.lift = nn.Conv1d(1, channels[0], 3, padding=1)
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        prev = channels[0]
        for i, ch in enumerate(channels):
            self.down.append(ModulatedBlock(prev, ch, cond_dim))
            if i < len(channels) - 1:
                self.downsample.append(nn.Conv1d(ch, ch, 3, stride=2, padding=1))
            prev = ch
        self.mid = ModulatedBlock(prev, prev, cond_dim)
        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for ch_skip, ch in zip(reversed(channels[:-1]), reversed(channels[:-1])):
            self.upsample.append(nn.Conv1d(prev, ch, 3, padding=1))
            self.up.append(ModulatedBlock(ch + ch_skip, ch, cond_dim))
            prev = ch
        self.head = nn.Conv1d(prev, 1, 3, padding=1)

    def conditioning(self, k, c):
        emb = sinusoidal_embedding(k, self.emb_dim).to(c.dtype)
        return self.step_mlp(emb) + self.context_proj(pool_context(c))

    def forward(self, x_k, k, c):
        """x_k: (B, L) noisy future; k: int or (B,) steps; c: (B, T, d) context."""
        if x_k.shape[-1] != self.seq_len:
            raise ValueError(f"denoiser built for length {self.seq_len}, got {x_k.shape[-1]}")
        cond = self.conditioning(k, c)
        h = self.lift(x_k.unsqueeze(1))
        skips = []
        for i, block in enumerate(self.down):
            h = block(h, cond)
            if i < len(self.downsample):
                skips.append(h)
                h = self.downsample[i](h)
        h = self.mid(h, cond)
        for up, block in zip(self.upsample, self.up):
            skip = skips.pop()
            h = F.interpolate(h, scale_factor=2, mode="nearest")[..., :skip.shape[-1]]
            h = block(torch.cat([up(h), skip], dim=1), cond)
        return self.head(h).squeeze(1)
