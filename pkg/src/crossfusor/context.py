"""Leader/follower interaction encoding and the cross-attention transformer block."""
from __future__ import annotations

import math

import torch
from torch import nn

from .encoder import check_finite


def build_query(z_stu_his: torch.Tensor) -> torch.Tensor:
    # returned by value so later in-place edits of the encoding do not leak in
    return z_stu_his.clone()


def group_pool(streams) -> torch.Tensor:
    """Concatenate per-stream features and mean-pool each group of len(streams).

    Streams are interleaved feature-by-feature before pooling, so output
    feature j is the mean of feature j across the streams.
    """
    stacked = torch.stack(list(streams), dim=-1)          # (..., T, d, s)
    flat = stacked.flatten(-2)                            # (..., T, d*s), interleaved concat
    return flat.unflatten(-1, (stacked.shape[-2], stacked.shape[-1])).mean(dim=-1)


class StreamEncoder(nn.Module):
    """GRU over one scalar series followed by a per-step linear map."""

    def __init__(self, hidden_size=50, d_model=50, num_layers=2):
        super().__init__()
        self.gru = nn.GRU(1, hidden_size, num_layers=num_layers, batch_first=True)
        self.linear = nn.Linear(hidden_size, d_model)

    def forward(self, series):
        out, _ = self.gru(series.unsqueeze(-1))
        return self.linear(out)


class KeyValueEncoder(nn.Module):
    """Keys from (x_lea, v_lea, dx1), values from (x_fol, v_fol, dx2)."""

    def __init__(self, hidden_size=50, d_model=50, num_layers=2):
        super().__init__()
        self.key_streams = nn.ModuleList(StreamEncoder(hidden_size, d_model, num_layers) for _ in range(3))
        self.value_streams = nn.ModuleList(StreamEncoder(hidden_size, d_model, num_layers) for _ in range(3))

    def forward(self, key_series, value_series):
        """Each argument is a sequence of three (B, T) series."""
        for s in (*key_series, *value_series):
            check_finite(s, "context stream")
        K = group_pool(enc(s) for enc, s in zip(self.key_streams, key_series))
        V = group_pool(enc(s) for enc, s in zip(self.value_streams, value_series))
        return K, V


def multi_head_cross_attention(Q, K, V, w_que, w_key, w_val, w_out, return_weights=False):
    """Scaled dot-product cross-attention.

    w_que, w_key, w_val: (h, d, d_head); w_out: (h * d_head, d). The softmax
    runs over key positions with temperature sqrt(d_head).
    """
    q = torch.einsum("...td,hde->...hte", Q, w_que)
    k = torch.einsum("...td,hde->...hte", K, w_key)
    v = torch.einsum("...td,hde->...hte", V, w_val)
    scores = q @ k.transpose(-1, -2) / math.sqrt(w_key.shape[-1])
    attn = torch.softmax(scores, dim=-1)
    heads = attn @ v                                        # (..., h, T, d_head)
    concat = heads.transpose(-3, -2).flatten(-2)            # (..., T, h * d_head)
    out = concat @ w_out
    return (out, attn) if return_weights else out


class CrossAttentionBlock(nn.Module):
    """Post-norm transformer block with the study encoding as the residual stream."""

    def __init__(self, d_model=50, n_heads=5, ff_size=100):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by {n_heads} heads")
        d_head = d_model // n_heads
        self.n_heads = n_heads
        self.w_que = nn.Parameter(torch.empty(n_heads, d_model, d_head))
        self.w_key = nn.Parameter(torch.empty(n_heads, d_model, d_head))
        self.w_val = nn.Parameter(torch.empty(n_heads, d_model, d_head))
        self.w_out = nn.Parameter(torch.empty(n_heads * d_head, d_model))
        self.norm1 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, ff_size), nn.GELU(), nn.Linear(ff_size, d_model))
        self.norm2 = nn.LayerNorm(d_model)
        bound = 1.0 / math.sqrt(d_model)
        for w in (self.w_que, self.w_key, self.w_val, self.w_out):
            nn.init.uniform_(w, -bound, bound)

    def attend(self, Q, K, V, return_weights=False):
        return multi_head_cross_attention(Q, K, V, self.w_que, self.w_key, self.w_val, self.w_out,
                                          return_weights=return_weights)

    def transformer_block(self, z_mca, Q):
        u = self.norm1(Q + z_mca)
        return self.norm2(u + self.ff(u))

    def forward(self, Q, K, V):
        return self.transformer_block(self.attend(Q, K, V), Q)


class LinearContext(nn.Module):
    """Ablation stand-in for the attention block: one affine map of [Q | K | V]."""

    def __init__(self, d_model=50):
        super().__init__()
        self.linear = nn.Linear(3 * d_model, d_model)

    def forward(self, Q, K, V):
        return self.linear(torch.cat([Q, K, V], dim=-1))
