"""The full conditional denoising network and its ablation variants."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import torch
from torch import nn

from .context import CrossAttentionBlock, KeyValueEncoder, LinearContext, build_query
from .denoiser import UNet1D
from .diffusion import DiffusionSchedule, NoiseScale, compute_noise_scale, sample_trajectory
from .encoder import HistoryEncoder, LinearHistoryEncoder
from .platoon import CH

ABLATIONS = ("no_noise_scaling", "no_hist_encoding", "no_cross_attention")


@dataclass
class ModelConfig:
    history_frames: int = 30
    future_frames: int = 50
    hidden_size: int = 50
    gru_layers: int = 2
    n_heads: int = 5
    ff_size: int = 100
    unet_channels: tuple = (8, 16, 32, 64, 128)
    n_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    ablations: tuple = field(default_factory=tuple)
    stop_scale_grad: bool = True

    def __post_init__(self):
        self.unet_channels = tuple(self.unet_channels)
        self.ablations = tuple(sorted(set(self.ablations)))
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablation flags {sorted(unknown)}; expected a subset of {ABLATIONS}")
        if self.future_frames % self.n_heads:
            raise ValueError(f"future_frames {self.future_frames} must be divisible by n_heads {self.n_heads}")

    @property
    def d_model(self) -> int:
        # one encoder feature per predicted frame, so sigma2 lines up with the future
        return self.future_frames

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unet_channels"] = list(self.unet_channels)
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


class Crossfusor(nn.Module):
    """History encoder + scaled noise + interaction context + U-Net denoiser.

    Inputs are normalized history tensors of shape (B, H, 8) in
    :data:`crossfusor.platoon.CHANNELS` order and normalized futures (B, F).
    """

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = cfg = config or ModelConfig()
        d = cfg.d_model
        if "no_hist_encoding" in cfg.ablations:
            self.history_encoder = LinearHistoryEncoder(d)
        else:
            self.history_encoder = HistoryEncoder(cfg.history_frames, cfg.hidden_size, d, cfg.gru_layers)
        self.kv_encoder = KeyValueEncoder(cfg.hidden_size, d, cfg.gru_layers)
        if "no_cross_attention" in cfg.ablations:
            self.context_block = LinearContext(d)
        else:
            self.context_block = CrossAttentionBlock(d, cfg.n_heads, cfg.ff_size)
        self.denoiser = UNet1D(cfg.future_frames, cfg.unet_channels, d_context=d, emb_dim=d)
        self.schedule = DiffusionSchedule(cfg.n_steps, cfg.beta_start, cfg.beta_end)
        # instrumentation: each hook is called with the NoiseScale actually used
        self.scale_hooks = []

    @property
    def noise_scaling(self) -> bool:
        return "no_noise_scaling" not in self.config.ablations

    def encode(self, history):
        """Return (z_stu_his, NoiseScale, context c) for a normalized history batch."""
        stu = history[..., [CH["x_stu"], CH["v_stu"]]]
        z = self.history_encoder(stu)
        if self.noise_scaling:
            scale = compute_noise_scale(z)
            if self.config.stop_scale_grad:
                scale = NoiseScale(scale.mu.detach(), scale.sigma2.detach())
        else:
            scale = NoiseScale.isotropic(z.shape[:-2] + (self.config.future_frames,), dtype=z.dtype)
        for hook in self.scale_hooks:
            hook(scale)
        Q = build_query(z)
        K, V = self.kv_encoder(
            [history[..., CH["x_lea"]], history[..., CH["v_lea"]], history[..., CH["dx1"]]],
            [history[..., CH["x_fol"]], history[..., CH["v_fol"]], history[..., CH["dx2"]]],
        )
        c = self.context_block(Q, K, V)
        return z, scale, c

    def predict_noise(self, x_k, k, c):
        return self.denoiser(x_k, k, c)

    @torch.no_grad()
    def sample(self, history, rng, callback=None):
        """Draw one normalized future per history row via the reverse chain."""
        _, scale, c = self.encode(history)
        shape = (history.shape[0], self.config.future_frames)
        return sample_trajectory(scale, self.schedule, self.predict_noise, c, rng, shape=shape,
                                 callback=callback)
