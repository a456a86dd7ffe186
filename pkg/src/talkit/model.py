"""Localizer backbone: conv embedding, local-attention pyramid, shared heads.

Tensors are channels-first ``(B, C, T)`` between modules, as in most 1-D
detection code; masks are boolean ``(B, T)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    num_classes: int = 110
    max_seq_len: int = 1024
    num_levels: int = 6
    embed_dim: int = 1024
    num_heads: int = 16
    attention_window: int = 19
    downsample_stride: int = 2
    input_width: int = 1028
    regression_ranges: tuple | None = None  # per level, finest-grid steps; doubling by default
    blocks_per_level: int = 1
    mlp_ratio: int = 4
    embed_layers: int = 2
    head_layers: int = 3
    downsample: str = "conv"  # "conv" (depthwise, stride 2) or "maxpool"
    cls_prior_prob: float = 0.01

    def __post_init__(self):
        if self.regression_ranges is None:
            self.regression_ranges = default_regression_ranges(self.num_levels)
        self.regression_ranges = tuple(tuple(float(x) for x in r) for r in self.regression_ranges)
        self.validate()

    def validate(self):
        if self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.attention_window % 2 == 0 or self.attention_window < 1:
            raise ConfigError(f"attention_window must be odd and positive, got {self.attention_window}")
        if self.max_seq_len % (self.downsample_stride ** (self.num_levels - 1)):
            raise ConfigError(
                f"max_seq_len {self.max_seq_len} not divisible by "
                f"{self.downsample_stride}^{self.num_levels - 1}"
            )
        if len(self.regression_ranges) != self.num_levels:
            raise ConfigError(
                f"need one regression range per level ({self.num_levels}), got {len(self.regression_ranges)}"
            )
        if self.downsample not in ("conv", "maxpool"):
            raise ConfigError(f"downsample must be 'conv' or 'maxpool', got {self.downsample!r}")
        if self.embed_layers < 1 or self.head_layers < 1 or self.blocks_per_level < 1:
            raise ConfigError("layer counts must be >= 1")

    def level_strides(self) -> list[int]:
        return [self.downsample_stride**lvl for lvl in range(self.num_levels)]

    def level_lengths(self) -> list[int]:
        return [self.max_seq_len // s for s in self.level_strides()]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regression_ranges"] = [[lo, "inf" if math.isinf(hi) else hi] for lo, hi in self.regression_ranges]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "regression_ranges" in d:
            d["regression_ranges"] = tuple((float(lo), float(hi)) for lo, hi in d["regression_ranges"])
        return cls(**d)


def default_regression_ranges(num_levels: int) -> tuple:
    """Doubling ranges [0,4), [4,8), ... with the last level open-ended."""
    ranges = []
    lo = 0.0
    for lvl in range(num_levels):
        hi = math.inf if lvl == num_levels - 1 else 4.0 * 2**lvl
        ranges.append((lo, hi))
        lo = hi
    return tuple(ranges)


@dataclass
class PyramidOutput:
    """Per-level outputs for one video, as numpy arrays.

    ``offsets`` are in units of the level stride; multiply by ``strides[l]``
    for finest-grid steps.
    """

    strides: list[int]
    class_logits: list[np.ndarray]  # T_l x C
    offsets: list[np.ndarray]  # T_l x 2, >= 0
    masks: list[np.ndarray] = field(default_factory=list)  # T_l bool

    @property
    def num_levels(self) -> int:
        return len(self.strides)


class MaskedConv1d(nn.Module):
    """Conv1d whose output is zeroed outside the (strided) mask."""

    def __init__(self, in_ch, out_ch, kernel_size=3, stride=1, groups=1, bias=True):
        super().__init__()
        self.stride = stride
        self.conv = nn.Conv1d(in_ch, out_ch, kernel_size, stride=stride, padding=kernel_size // 2, groups=groups, bias=bias)

    def forward(self, x, mask):
        out_mask = mask[:, :: self.stride] if self.stride > 1 else mask
        return self.conv(x) * out_mask[:, None, :].to(x.dtype), out_mask


class ChannelLayerNorm(nn.Module):
    """LayerNorm over channels of a (B, C, T) tensor."""

    def __init__(self, dim):
        super().__init__()
        self.norm = nn.LayerNorm(dim)

    def forward(self, x):
        return self.norm(x.transpose(1, 2)).transpose(1, 2)


def local_attention(q, k, v, key_mask, window: int):
    """Multi-head attention restricted to a centered window of ``window`` keys.

    q, k, v: (B, H, T, d); key_mask: (B, T) bool. Keys outside the sequence or
    masked out get zero weight.
    """
    half = window // 2
    t = q.shape[2]
    kw = F.pad(k, (0, 0, half, half)).unfold(2, window, 1)  # B H T d W
    vw = F.pad(v, (0, 0, half, half)).unfold(2, window, 1)
    scores = torch.einsum("bhtd,bhtdw->bhtw", q, kw) / math.sqrt(q.shape[-1])
    valid = F.pad(key_mask, (half, half), value=False).unfold(1, window, 1)[:, None, :t, :]
    scores = scores.masked_fill(~valid, torch.finfo(scores.dtype).min)
    attn = torch.softmax(scores, dim=-1)
    return torch.einsum("bhtw,bhtdw->bhtd", attn, vw)


def dense_attention(q, k, v, key_mask):
    scores = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    scores = scores.masked_fill(~key_mask[:, None, None, :], torch.finfo(scores.dtype).min)
    return torch.softmax(scores, dim=-1) @ v


class LocalTransformerBlock(nn.Module):
    """Pre-norm block: local multi-head self-attention, then a pointwise MLP."""

    def __init__(self, dim, num_heads, window, mlp_ratio=4):
        super().__init__()
        self.num_heads = num_heads
        self.window = window
        self.norm1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, mlp_ratio * dim), nn.GELU(), nn.Linear(mlp_ratio * dim, dim))

    def attend(self, x, mask):
        # x: (B, T, C)
        b, t, c = x.shape
        h = self.num_heads
        q, k, v = self.qkv(self.norm1(x)).view(b, t, 3, h, c // h).permute(2, 0, 3, 1, 4)
        out = local_attention(q, k, v, mask, self.window)
        return self.proj(out.transpose(1, 2).reshape(b, t, c))

    def forward(self, x, mask):
        # x: (B, C, T)
        m = mask[:, :, None].to(x.dtype)
        y = x.transpose(1, 2)
        y = (y + self.attend(y, mask)) * m
        y = (y + self.mlp(self.norm2(y))) * m
        return y.transpose(1, 2)


class Downsample(nn.Module):
    def __init__(self, dim, stride, kind="conv"):
        super().__init__()
        self.stride = stride
        self.kind = kind
        if kind == "conv":
            self.conv = MaskedConv1d(dim, dim, 3, stride=stride, groups=dim)
            with torch.no_grad():
                self.conv.conv.weight.fill_(1.0 / 3.0)
                self.conv.conv.bias.zero_()

    def forward(self, x, mask):
        if self.kind == "conv":
            return self.conv(x, mask)
        out_mask = mask[:, :: self.stride]
        out = F.max_pool1d(x, self.stride + 1, stride=self.stride, padding=(self.stride + 1) // 2)
        return out[..., : out_mask.shape[1]] * out_mask[:, None, :].to(x.dtype), out_mask


class ConvEmbedding(nn.Module):
    """Masked conv stack mapping the fused input width to embed_dim."""

    def __init__(self, in_dim, dim, num_layers=2):
        super().__init__()
        self.layers = nn.ModuleList(
            MaskedConv1d(in_dim if i == 0 else dim, dim, 3) for i in range(num_layers)
        )

    def forward(self, x, mask):
        x = x * mask[:, None, :].to(x.dtype)
        for i, layer in enumerate(self.layers):
            x, _ = layer(x, mask)
            if i < len(self.layers) - 1:
                x = F.relu(x)
        return x


class PyramidEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.levels = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        self.norms = nn.ModuleList()
        for lvl in range(cfg.num_levels):
            if lvl > 0:
                self.downsamples.append(Downsample(cfg.embed_dim, cfg.downsample_stride, cfg.downsample))
            self.levels.append(
                nn.ModuleList(
                    LocalTransformerBlock(cfg.embed_dim, cfg.num_heads, cfg.attention_window, cfg.mlp_ratio)
                    for _ in range(cfg.blocks_per_level)
                )
            )
            self.norms.append(ChannelLayerNorm(cfg.embed_dim))

    def forward(self, x, mask):
        feats, masks = [], []
        for lvl, blocks in enumerate(self.levels):
            if lvl > 0:
                x, mask = self.downsamples[lvl - 1](x, mask)
            for block in blocks:
                x = block(x, mask)
            feats.append(self.norms[lvl](x) * mask[:, None, :].to(x.dtype))
            masks.append(mask)
        return feats, masks


class ConvHead(nn.Module):
    """Masked conv stack shared by all pyramid levels."""

    def __init__(self, dim, out_dim, num_layers=3):
        super().__init__()
        self.hidden = nn.ModuleList(MaskedConv1d(dim, dim, 3) for _ in range(num_layers - 1))
        self.out = MaskedConv1d(dim, out_dim, 3)

    def forward(self, x, mask):
        for layer in self.hidden:
            x, _ = layer(x, mask)
            x = F.relu(x)
        x, _ = self.out(x, mask)
        return x


class SourceProjection(nn.Module):
    """Learned per-source affine projections followed by concatenation."""

    def __init__(self, in_dims: Sequence[int], out_dims: Sequence[int]):
        super().__init__()
        self.linears = nn.ModuleList()
        for d_in, d_out in zip(in_dims, out_dims):
            lin = nn.Linear(d_in, d_out)
            bound = 1.0 / math.sqrt(d_in)
            nn.init.uniform_(lin.weight, -bound, bound)
            nn.init.uniform_(lin.bias, -bound, bound)
            self.linears.append(lin)
        self.in_dims = list(in_dims)

    def forward(self, x):
        # x: (B, sum(in_dims), T)
        parts = torch.split(x, self.in_dims, dim=1)
        return torch.cat([lin(p.transpose(1, 2)).transpose(1, 2) for lin, p in zip(self.linears, parts)], dim=1)


class ActionLocalizer(nn.Module):
    """Fusion + embedding + pyramid + heads.

    ``fusion`` is "cat" (raw concatenation of sources into the embedding) or
    "proj_cat" (learned per-source projection to ``proj_dims`` first).
    """

    def __init__(self, cfg: ModelConfig, source_dims: Sequence[int] | None = None,
                 fusion: str = "cat", proj_dims: Sequence[int] | None = None):
        super().__init__()
        self.cfg = cfg
        self.fusion = fusion
        self.source_dims = list(source_dims) if source_dims is not None else [cfg.input_width]
        if fusion == "proj_cat":
            if proj_dims is None or len(proj_dims) != len(self.source_dims):
                raise ConfigError("proj_cat fusion needs one projection dim per source")
            self.project = SourceProjection(self.source_dims, proj_dims)
            width = sum(proj_dims)
        elif fusion == "cat":
            self.project = None
            width = sum(self.source_dims)
        else:
            raise ConfigError(f"unknown fusion mode {fusion!r}")
        if width != cfg.input_width:
            raise ConfigError(f"fused width {width} != model input_width {cfg.input_width}")
        self.embed = ConvEmbedding(cfg.input_width, cfg.embed_dim, cfg.embed_layers)
        self.encoder = PyramidEncoder(cfg)
        self.cls_head = ConvHead(cfg.embed_dim, cfg.num_classes, cfg.head_layers)
        self.reg_head = ConvHead(cfg.embed_dim, 2, cfg.head_layers)
        prior = cfg.cls_prior_prob
        nn.init.constant_(self.cls_head.out.conv.bias, -math.log((1 - prior) / prior))

    def heads(self, feats, masks):
        logits, offsets = [], []
        for x, m in zip(feats, masks):
            logits.append(self.cls_head(x, m).transpose(1, 2))
            offsets.append(F.softplus(self.reg_head(x, m)).transpose(1, 2))
        return logits, offsets

    def forward(self, x, mask):
        """x: (B, sum(source_dims), T) raw concatenated sources; mask: (B, T) bool.

        Returns per-level lists of class logits (B, T_l, C), stride-normalized
        offsets (B, T_l, 2) and masks (B, T_l).
        """
        if x.shape[-1] > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {x.shape[-1]} exceeds max_seq_len {self.cfg.max_seq_len}")
        if self.project is not None:
            x = self.project(x * mask[:, None, :].to(x.dtype))
        feats, masks = self.encoder(self.embed(x, mask), mask)
        logits, offsets = self.heads(feats, masks)
        return logits, offsets, masks


def pad_batch(arrays: Sequence[np.ndarray], max_len: int, dtype=torch.float32):
    """Stack T_i x D arrays into (B, D, max_len) plus a (B, max_len) mask."""
    d = arrays[0].shape[1]
    x = torch.zeros(len(arrays), d, max_len, dtype=dtype)
    mask = torch.zeros(len(arrays), max_len, dtype=torch.bool)
    for i, a in enumerate(arrays):
        t = a.shape[0]
        if t > max_len:
            raise ValueError(f"sequence length {t} exceeds max_seq_len {max_len}")
        x[i, :, :t] = torch.as_tensor(np.asarray(a).T, dtype=dtype)
        mask[i, :t] = True
    return x, mask


def to_pyramid_outputs(logits, offsets, masks, strides) -> list[PyramidOutput]:
    out = []
    for b in range(logits[0].shape[0]):
        out.append(
            PyramidOutput(
                strides=list(strides),
                class_logits=[lg[b].detach().cpu().double().numpy() for lg in logits],
                offsets=[of[b].detach().cpu().double().numpy() for of in offsets],
                masks=[m[b].detach().cpu().numpy() for m in masks],
            )
        )
    return out
