"""Early grounding: cross-modal interaction plus text-conditioned dynamic
convolution that filters video features down to the referred object.

The grounded feature is the medium both downstream tasks consume: mask
decoding reads it through the instance decoder's memory, and embedding
reconstruction pools it back into the text space.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .blocks import FeedForward, MultiheadCrossAttention
from .netpbm import write_pgm


@dataclass
class GroundedTokens:
    """Cross-attended streams; token layout (B, N, C)."""

    f_prime: torch.Tensor
    g_prime: torch.Tensor
    h_f: torch.Tensor
    h_g: torch.Tensor


def pool_bins(length: int, slots: int):
    """Contiguous pooling bins: remainder spreads over the leading bins, so
    length 6 into 4 slots gives sizes (2, 2, 1, 1); length == slots is the
    identity. Shorter-than-slots inputs repeat the last token."""
    if length < 1:
        raise ValueError("cannot pool an empty sequence")
    if length < slots:
        return [(min(j, length - 1), min(j, length - 1) + 1) for j in range(slots)]
    base, rem = divmod(length, slots)
    bins = []
    start = 0
    for j in range(slots):
        size = base + (1 if j < rem else 0)
        bins.append((start, start + size))
        start += size
    return bins


class EarlyGrounding(nn.Module):
    def __init__(self, channels: int = 64, heads: int = 4, kernels: int = 4):
        super().__init__()
        self.channels = channels
        self.kernels = kernels
        self.vis_attn = MultiheadCrossAttention(channels, heads)
        self.vis_norm1 = nn.LayerNorm(channels)
        self.vis_ffn = FeedForward(channels)
        self.vis_norm2 = nn.LayerNorm(channels)
        self.txt_attn = MultiheadCrossAttention(channels, heads)
        self.txt_norm1 = nn.LayerNorm(channels)
        self.txt_ffn = FeedForward(channels)
        self.txt_norm2 = nn.LayerNorm(channels)
        self.kernel_proj = nn.Linear(channels, channels)
        self.mix = nn.Conv1d(kernels, channels, 1)
        self.norm = nn.BatchNorm1d(channels)

    def cross_attend(self, f_tokens, g_tokens, text_pad_mask=None) -> GroundedTokens:
        """f_tokens (B, T*h*w, C), g_tokens (B, L, C)."""
        h_f = self.vis_norm1(self.vis_attn(f_tokens, g_tokens, text_pad_mask) + f_tokens)
        f_prime = self.vis_norm2(self.vis_ffn(h_f) + h_f)
        h_g = self.txt_norm1(self.txt_attn(g_tokens, f_tokens) + g_tokens)
        g_prime = self.txt_norm2(self.txt_ffn(h_g) + h_g)
        return GroundedTokens(f_prime, g_prime, h_f, h_g)

    def make_kernels(self, g_prime, valid_mask=None) -> torch.Tensor:
        """Pool g_prime (B, L, C) to one slot per kernel, then one linear map
        per slot. Returns (B, K, C)."""
        B, L, C = g_prime.shape
        if valid_mask is None:
            valid_mask = torch.ones(B, L, dtype=torch.bool, device=g_prime.device)
        pooled = g_prime.new_zeros(B, self.kernels, C)
        for b in range(B):
            row = g_prime[b][valid_mask[b]]
            for j, (start, end) in enumerate(pool_bins(row.shape[0], self.kernels)):
                pooled[b, j] = row[start:end].mean(dim=0)
        return torch.stack(
            [head(pooled[:, j]) for j, head in enumerate(self.kernel_heads)], dim=1
        )

    def ground(self, f_prime, kernels) -> torch.Tensor:
        """Dynamic conv: per-kernel response maps, 1x1 mix back to C channels,
        residual onto f_prime, then batch norm over positions.

        f_prime (B, P, C), kernels (B, K, C) -> (B, P, C)."""
        responses = torch.einsum("bkc,bpc->bkp", kernels, f_prime)
        mixed = self.mix(responses)  # (B, C, P)
        out = self.norm(mixed + f_prime.transpose(1, 2))
        return out.transpose(1, 2)

    def forward(self, f_tokens, g_tokens, text_pad_mask=None):
        tokens = self.cross_attend(f_tokens, g_tokens, text_pad_mask)
        kernels = self.make_kernels(
            tokens.g_prime, None if text_pad_mask is None else ~text_pad_mask
        )
        f_early = self.ground(tokens.f_prime, kernels)
        return f_early, tokens, kernels


def channel_activation_map(f_early, shape) -> np.ndarray:
    """Mean activation over channels, reshaped to (T, h, w)."""
    T, h, w = shape
    arr = f_early.detach().cpu().numpy() if isinstance(f_early, torch.Tensor) else np.asarray(f_early)
    if arr.ndim != 2 or arr.shape[0] != T * h * w:
        raise ValueError(f"expected ({T * h * w}, C) tokens, got {arr.shape}")
    return arr.mean(axis=1).reshape(T, h, w)


def dump_cam(f_early, shape, out_dir, prefix: str = "cam") -> list:
    """Write per-frame channel activation maps as binary PGM files.

    Each frame normalizes independently to the full gray range; a constant
    frame maps to mid-gray. Returns the written paths.
    """
    cam = channel_activation_map(f_early, shape)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in range(cam.shape[0]):
        frame = cam[t]
        lo, hi = float(frame.min()), float(frame.max())
        if hi > lo:
            gray = np.round((frame - lo) / (hi - lo) * 255.0).astype(np.uint8)
        else:
            gray = np.full(frame.shape, 128, dtype=np.uint8)
        path = out_dir / f"{prefix}_{t}.pgm"
        write_pgm(path, gray)
        paths.append(path)
    return paths
