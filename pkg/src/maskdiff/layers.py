"""Conditioning layers: spatially-adaptive (SPADE) normalization blocks for the
layout condition and mask-restricted cross-attention for the style condition.

Conventions used throughout:
  - feature maps are (B, C, H, W) tensors; token views are (B, N, C) with N=H*W
  - semantic masks enter as one-hot tensors (B, num_classes, H', W') whose
    spatial dims are an integer multiple of the feature resolution; a zero
    tensor (or None) is the null condition with no class present anywhere
  - output projections of attention/feed-forward branches start near zero
    (scaled init) so blocks are near-identity early in training while still
    letting gradient reach every upstream parameter
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

OUT_PROJ_SCALE = 1e-3


def scaled_init_(module: nn.Module, scale: float = OUT_PROJ_SCALE) -> nn.Module:
    with torch.no_grad():
        module.weight.mul_(scale)
        if module.bias is not None:
            module.bias.zero_()
    return module


def zero_output_projections(module: nn.Module) -> None:
    """Force every branch output projection in the subtree to exact zero.

    Turns transformer blocks into exact identity maps; used by tests and
    controlled ablations rather than as a training initialization.
    """
    for m in module.modules():
        if getattr(m, "is_output_projection", False):
            with torch.no_grad():
                m.weight.zero_()
                if m.bias is not None:
                    m.bias.zero_()


def _mark_output(module: nn.Module) -> nn.Module:
    module.is_output_projection = True
    return module


def shrink_onehot(mask: torch.Tensor, h: int, w: int) -> torch.Tensor:
    """Top-left nearest downsampling of a one-hot mask to (h, w)."""
    src_h, src_w = mask.shape[-2:]
    if src_h % h or src_w % w:
        raise ValueError(f"mask dims {src_h}x{src_w} not divisible by target {h}x{w}")
    return mask[..., :: src_h // h, :: src_w // w]


def mask_tokens(mask, batch, num_classes, h, w, device, dtype):
    """(B, N, C) binary mask-token matrix at resolution (h, w); zeros if mask is None."""
    if mask is None:
        return torch.zeros(batch, h * w, num_classes, device=device, dtype=dtype)
    if mask.shape[1] != num_classes:
        raise ValueError(f"mask has {mask.shape[1]} classes, layer expects {num_classes}")
    m = shrink_onehot(mask, h, w)
    return m.permute(0, 2, 3, 1).reshape(batch, h * w, num_classes).to(dtype)


def spatial_normalize(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    """Parameter-free per-channel, per-sample normalization over space."""
    mean = x.mean(dim=(-2, -1), keepdim=True)
    var = x.var(dim=(-2, -1), keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


class SpadeNorm(nn.Module):
    """Normalize parameter-free, then modulate per pixel from the semantic mask:
    out = gamma(M) * x_hat + beta(M), with gamma/beta from a two-conv net on the
    resized one-hot mask. gamma's bias starts at 1 so modulation begins near
    identity. `identity_modulation` bypasses the nets (gamma=1, beta=0).
    """

    def __init__(self, channels: int, num_classes: int, hidden: int = 64, kernel_size: int = 3):
        super().__init__()
        self.num_classes = num_classes
        pad = kernel_size // 2
        self.shared = nn.Conv2d(num_classes, hidden, kernel_size, padding=pad)
        self.gamma = nn.Conv2d(hidden, channels, kernel_size, padding=pad)
        self.beta = nn.Conv2d(hidden, channels, kernel_size, padding=pad)
        nn.init.ones_(self.gamma.bias)
        nn.init.zeros_(self.beta.bias)
        self.identity_modulation = False

    def forward(self, x: torch.Tensor, mask) -> torch.Tensor:
        normalized = spatial_normalize(x)
        if self.identity_modulation:
            return normalized
        h, w = x.shape[-2:]
        if mask is None:
            m = torch.zeros(x.shape[0], self.num_classes, h, w, device=x.device, dtype=x.dtype)
        else:
            if mask.shape[1] != self.num_classes:
                raise ValueError(f"mask has {mask.shape[1]} classes, expected {self.num_classes}")
            m = shrink_onehot(mask, h, w).to(x.dtype)
        hidden = F.relu(self.shared(m))
        return self.gamma(hidden) * normalized + self.beta(hidden)


class MaskedCrossAttention(nn.Module):
    """Cross-attention from spatial tokens to the C per-class style rows,
    with the attention logits restricted by the semantic mask.

    logits = Q K^T / sqrt(d); then per mask mode:
      multiplicative: logits * M          (the mask scales the raw logits)
      additive:       logits + log(M)     (-inf where M=0; rows with every
                                           token masked fall back to uniform)
      none:           unchanged
    Q comes from the spatial features, K and V from the style rows.
    """

    def __init__(self, channels: int, context_dim: int, heads: int = 1, mode: str = "additive"):
        super().__init__()
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        if mode not in ("additive", "multiplicative", "none"):
            raise ValueError(f"unknown mask mode {mode!r}")
        self.heads = heads
        self.mode = mode
        self.scale = 1.0 / math.sqrt(channels // heads)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(context_dim, channels, bias=False)
        self.to_v = nn.Linear(context_dim, channels, bias=False)
        self.to_out = _mark_output(scaled_init_(nn.Linear(channels, channels)))

    def _split(self, t):
        b, n, c = t.shape
        return t.view(b, n, self.heads, c // self.heads).transpose(1, 2)

    def attend(self, tokens: torch.Tensor, style: torch.Tensor, m_tokens: torch.Tensor) -> torch.Tensor:
        """Pre-residual attention output for (B,N,c) tokens and (B,C,ctx) style rows."""
        if style.shape[1] != m_tokens.shape[2]:
            raise ValueError(f"style has {style.shape[1]} classes, mask tokens have {m_tokens.shape[2]}")
        q = self._split(self.to_q(tokens))
        k = self._split(self.to_k(style))
        v = self._split(self.to_v(style))
        logits = torch.einsum("bhnd,bhcd->bhnc", q, k) * self.scale
        m = m_tokens[:, None]  # broadcast over heads
        if self.mode == "multiplicative":
            logits = logits * m
        elif self.mode == "additive":
            empty = m.sum(dim=-1, keepdim=True) == 0
            logits = logits.masked_fill(m == 0, float("-inf"))
            # fully-masked rows (null condition) get uniform weights
            logits = torch.where(empty, torch.zeros_like(logits), logits)
        weights = logits.softmax(dim=-1)
        out = torch.einsum("bhnc,bhcd->bhnd", weights, v)
        out = out.transpose(1, 2).reshape(tokens.shape)
        return self.to_out(out)

    def forward(self, x: torch.Tensor, style: torch.Tensor, mask) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        m_tokens = mask_tokens(mask, b, style.shape[1], h, w, x.device, x.dtype)
        out = tokens + self.attend(tokens, style, m_tokens)
        return out.transpose(1, 2).view(b, c, h, w)


class SelfAttention(nn.Module):
    """Standard scaled dot-product attention over the N spatial tokens."""

    def __init__(self, channels: int, heads: int = 1):
        super().__init__()
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.scale = 1.0 / math.sqrt(channels // heads)
        self.to_qkv = nn.Linear(channels, channels * 3, bias=False)
        self.to_out = _mark_output(scaled_init_(nn.Linear(channels, channels)))

    def attend(self, tokens: torch.Tensor) -> torch.Tensor:
        b, n, c = tokens.shape
        q, k, v = self.to_qkv(tokens).chunk(3, dim=-1)
        split = lambda t: t.view(b, n, self.heads, c // self.heads).transpose(1, 2)
        q, k, v = split(q), split(k), split(v)
        weights = (torch.einsum("bhnd,bhmd->bhnm", q, k) * self.scale).softmax(dim=-1)
        out = torch.einsum("bhnm,bhmd->bhnd", weights, v)
        return self.to_out(out.transpose(1, 2).reshape(b, n, c))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        out = tokens + self.attend(tokens)
        return out.transpose(1, 2).view(b, c, h, w)


class FeedForward(nn.Module):
    def __init__(self, channels: int, mult: int = 4):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(channels, channels * mult),
            nn.GELU(),
            _mark_output(scaled_init_(nn.Linear(channels * mult, channels))),
        )

    def forward(self, tokens):
        return self.net(tokens)


class SpatialTransformer(nn.Module):
    """Pre-norm transformer block over spatial tokens:
    self-attention, mask-restricted cross-attention to the style rows, and a
    pointwise feed-forward, each residual. Shape-preserving on (B, C, H, W).
    """

    def __init__(self, channels: int, context_dim: int, time_dim: int,
                 heads: int = 1, mode: str = "additive"):
        super().__init__()
        self.norm_self = nn.LayerNorm(channels)
        self.norm_cross = nn.LayerNorm(channels)
        self.norm_ff = nn.LayerNorm(channels)
        self.self_attn = SelfAttention(channels, heads)
        self.cross_attn = MaskedCrossAttention(channels, context_dim, heads, mode)
        self.ff = FeedForward(channels)
        self.time_proj = _mark_output(scaled_init_(nn.Linear(time_dim, channels)))
        self.ablate_self_attention = False

    def forward(self, x: torch.Tensor, style: torch.Tensor, mask, t_emb: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        m_tokens = mask_tokens(mask, b, style.shape[1], h, w, x.device, x.dtype)
        tokens = tokens + self.time_proj(t_emb)[:, None, :]
        if not self.ablate_self_attention:
            tokens = tokens + self.self_attn.attend(self.norm_self(tokens))
        tokens = tokens + self.cross_attn.attend(self.norm_cross(tokens), style, m_tokens)
        tokens = tokens + self.ff(self.norm_ff(tokens))
        return tokens.transpose(1, 2).view(b, c, h, w)


class ResBlock(nn.Module):
    """Plain residual block (encoder side): GroupNorm, SiLU, conv, timestep
    scale/shift injection, GroupNorm, SiLU, conv, learned skip on width change.
    """

    def __init__(self, in_channels: int, out_channels: int, time_dim: int, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2
        groups = 8 if in_channels % 8 == 0 else 1
        self.norm1 = nn.GroupNorm(groups, in_channels)
        self.conv1 = nn.Conv2d(in_channels, out_channels, kernel_size, padding=pad)
        self.time_mlp = nn.Linear(time_dim, out_channels * 2)
        self.norm2 = nn.GroupNorm(8 if out_channels % 8 == 0 else 1, out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, kernel_size, padding=pad)
        self.skip = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        scale, shift = self.time_mlp(t_emb)[:, :, None, None].chunk(2, dim=1)
        h = h * (1 + scale) + shift
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class SpadeResBlock(nn.Module):
    """Residual block whose normalizations are SPADE layers (decoder side):
    spade, SiLU, conv, timestep scale/shift, spade, SiLU, conv, learned skip.
    """

    def __init__(self, in_channels: int, out_channels: int, num_classes: int,
                 time_dim: int, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2
        self.spade1 = SpadeNorm(in_channels, num_classes)
        self.conv1 = nn.Conv2d(in_channels, out_channels, kernel_size, padding=pad)
        self.time_mlp = nn.Linear(time_dim, out_channels * 2)
        self.spade2 = SpadeNorm(out_channels, num_classes)
        self.conv2 = nn.Conv2d(out_channels, out_channels, kernel_size, padding=pad)
        self.skip = nn.Conv2d(in_channels, out_channels, 1) if in_channels != out_channels else nn.Identity()

    def forward(self, x: torch.Tensor, mask, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.spade1(x, mask)))
        scale, shift = self.time_mlp(t_emb)[:, :, None, None].chunk(2, dim=1)
        h = h * (1 + scale) + shift
        h = self.conv2(F.silu(self.spade2(h, mask)))
        return self.skip(x) + h
