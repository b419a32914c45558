"""Speaker-embedding encoders with selectable frame-level tap layers.

Two backbones are provided:

* ``xvector``: five TDNN layers with contexts {-2..2}, {-2,0,2}, {-3,0,3},
  {1}, {1} (no padding, so each layer shrinks the frame axis; see
  ``XVectorEncoder.FRAME_SHRINKAGE``), statistics pooling, and an affine
  embedding layer. Reference widths: channels=512, embed_dim=512,
  40-mel features.
* ``ecapa``: an initial TDNN, three SE-Res2 blocks (dilations 2, 3, 4,
  split scale 8), a 1x1 aggregation conv over the concatenated block
  outputs, attentive statistics pooling, and an affine embedding layer.
  All frame-level layers are stride 1 with same-padding, so every tap
  layer preserves the input frame count. Reference widths: channels=512,
  embed_dim=192, 80-mel features.

``tap_layer`` selects which layer's output (indices 0-4) is returned as
the frame-level feature map alongside the utterance embedding; the tap is
read-only and never changes the embedding path.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

RES2_SCALE = 8
_VAR_FLOOR = 1e-24


@dataclass
class EncoderConfig:
    arch: str = "ecapa"
    channels: int = 512
    embed_dim: int = 192
    tap_layer: int = 0
    num_mels: int = 80

    def __post_init__(self):
        if self.arch not in ("xvector", "ecapa"):
            raise ValueError(f"unknown architecture {self.arch!r}")
        if not 0 <= self.tap_layer <= 4:
            raise ValueError(f"tap_layer must be in 0..4, got {self.tap_layer}")
        if self.channels < 8:
            raise ValueError("channels must be >= 8")
        if self.embed_dim < 8:
            raise ValueError("embed_dim must be >= 8")
        if self.arch == "ecapa" and self.channels % RES2_SCALE != 0:
            raise ValueError(f"ecapa channels must be divisible by {RES2_SCALE}")


def weighted_stats_pool(frames: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Weighted mean and standard deviation over the time axis.

    frames: [..., T, D]; weights: [..., T] or [..., T, D], summing to 1
    over T. Returns [..., 2*D] (mean concatenated with std).
    """
    if weights.dim() == frames.dim() - 1:
        weights = weights.unsqueeze(-1)
    mean = (weights * frames).sum(dim=-2)
    sq_mean = (weights * frames.pow(2)).sum(dim=-2)
    var = sq_mean - mean.pow(2)
    std = torch.sqrt(torch.clamp(var, min=_VAR_FLOOR))
    return torch.cat([mean, std], dim=-1)


def stats_pool(frames: torch.Tensor) -> torch.Tensor:
    """Mean/std pooling with uniform weights; frames [..., T, D] -> [..., 2*D]."""
    t = frames.shape[-2]
    weights = frames.new_full(frames.shape[:-1], 1.0 / t)
    return weighted_stats_pool(frames, weights)


class TdnnLayer(nn.Module):
    """Conv1d -> ReLU -> BatchNorm over [B, C, T]."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int, dilation: int = 1, padding: int = 0):
        super().__init__()
        self.conv = nn.Conv1d(in_ch, out_ch, kernel, dilation=dilation, padding=padding)
        self.bn = nn.BatchNorm1d(out_ch)

    def forward(self, x):
        return self.bn(F.relu(self.conv(x)))


class SqueezeExcite(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        hidden = max(4, channels // 4)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):  # [B, C, T]
        gate = torch.sigmoid(self.fc2(F.relu(self.fc1(x.mean(dim=2)))))
        return x * gate.unsqueeze(-1)


class Res2Dilated(nn.Module):
    """Split-channel dilated convolution in the Res2 style (first split passes through)."""

    def __init__(self, channels: int, kernel: int, dilation: int, scale: int = RES2_SCALE):
        super().__init__()
        if channels % scale != 0:
            raise ValueError("channels must be divisible by the split scale")
        self.scale = scale
        width = channels // scale
        pad = dilation * (kernel - 1) // 2
        self.convs = nn.ModuleList(
            nn.Conv1d(width, width, kernel, dilation=dilation, padding=pad)
            for _ in range(scale - 1)
        )

    def forward(self, x):
        splits = torch.chunk(x, self.scale, dim=1)
        out = [splits[0]]
        prev = None
        for i, conv in enumerate(self.convs):
            piece = splits[i + 1] if prev is None else splits[i + 1] + prev
            prev = conv(piece)
            out.append(prev)
        return torch.cat(out, dim=1)


class SERes2Block(nn.Module):
    """1x1 conv -> dilated Res2 conv -> 1x1 conv, squeeze-excitation, residual add."""

    def __init__(self, channels: int, kernel: int, dilation: int):
        super().__init__()
        self.in_conv = TdnnLayer(channels, channels, 1)
        self.res2 = Res2Dilated(channels, kernel, dilation)
        self.mid_bn = nn.BatchNorm1d(channels)
        self.out_conv = TdnnLayer(channels, channels, 1)
        self.se = SqueezeExcite(channels)

    def forward(self, x):
        h = self.in_conv(x)
        h = self.mid_bn(F.relu(self.res2(h)))
        h = self.out_conv(h)
        return x + self.se(h)


class AttentiveStatsPool(nn.Module):
    """Per-channel attention weights over time feeding weighted mean/std pooling."""

    def __init__(self, channels: int):
        super().__init__()
        hidden = max(8, channels // 4)
        self.pre = nn.Conv1d(channels, hidden, 1)
        self.post = nn.Conv1d(hidden, channels, 1)

    def attention(self, x):  # [B, C, T] -> weights [B, C, T], softmax over T
        return torch.softmax(self.post(torch.tanh(self.pre(x))), dim=2)

    def forward(self, x):  # [B, C, T] -> [B, 2C]
        w = self.attention(x)
        return weighted_stats_pool(x.transpose(1, 2), w.transpose(1, 2))


def _check_features(cfg: EncoderConfig, feats: torch.Tensor) -> tuple[torch.Tensor, bool]:
    single = feats.dim() == 2
    if single:
        feats = feats.unsqueeze(0)
    if feats.dim() != 3:
        raise ValueError("features must be [T, F] or [B, T, F]")
    if feats.shape[-1] != cfg.num_mels:
        raise ValueError(
            f"feature dim {feats.shape[-1]} does not match configured num_mels {cfg.num_mels}"
        )
    if feats.shape[-2] < 1:
        raise ValueError("features must contain at least one frame")
    return feats, single


class EcapaEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        if cfg.arch != "ecapa":
            raise ValueError("config is not for the ecapa architecture")
        self.cfg = cfg
        c = cfg.channels
        self.layer0 = TdnnLayer(cfg.num_mels, c, 5, padding=2)
        self.layer1 = SERes2Block(c, 3, dilation=2)
        self.layer2 = SERes2Block(c, 3, dilation=3)
        self.layer3 = SERes2Block(c, 3, dilation=4)
        self.layer4 = nn.Conv1d(3 * c, 3 * c, 1)
        self.pool = AttentiveStatsPool(3 * c)
        self.pool_bn = nn.BatchNorm1d(6 * c)
        self.embed = nn.Linear(6 * c, cfg.embed_dim)

    def tap_dim(self, tap_layer: int) -> int:
        return 3 * self.cfg.channels if tap_layer == 4 else self.cfg.channels

    def forward(self, feats: torch.Tensor, tap_layer: int | None = None):
        feats, single = _check_features(self.cfg, feats)
        tap = self.cfg.tap_layer if tap_layer is None else tap_layer
        x = feats.transpose(1, 2)  # [B, F, T]
        h0 = self.layer0(x)
        h1 = self.layer1(h0)
        h2 = self.layer2(h1)
        h3 = self.layer3(h2)
        h4 = F.relu(self.layer4(torch.cat([h1, h2, h3], dim=1)))
        emb = self.embed(self.pool_bn(self.pool(h4)))
        frame_map = (h0, h1, h2, h3, h4)[tap].transpose(1, 2)
        if single:
            return frame_map[0], emb[0]
        return frame_map, emb


class XVectorEncoder(nn.Module):
    # Cumulative frame-count loss at the output of layers 0..4 (valid convs).
    FRAME_SHRINKAGE = (4, 8, 14, 14, 14)

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        if cfg.arch != "xvector":
            raise ValueError("config is not for the xvector architecture")
        self.cfg = cfg
        c = cfg.channels
        self.layers = nn.ModuleList(
            [
                TdnnLayer(cfg.num_mels, c, 5),
                TdnnLayer(c, c, 3, dilation=2),
                TdnnLayer(c, c, 3, dilation=3),
                TdnnLayer(c, c, 1),
                TdnnLayer(c, 3 * c, 1),
            ]
        )
        self.embed = nn.Linear(6 * c, cfg.embed_dim)

    def tap_dim(self, tap_layer: int) -> int:
        return 3 * self.cfg.channels if tap_layer == 4 else self.cfg.channels

    def min_frames(self) -> int:
        return self.FRAME_SHRINKAGE[-1] + 1

    def forward(self, feats: torch.Tensor, tap_layer: int | None = None):
        feats, single = _check_features(self.cfg, feats)
        tap = self.cfg.tap_layer if tap_layer is None else tap_layer
        if feats.shape[-2] < self.min_frames():
            raise ValueError(
                f"xvector needs at least {self.min_frames()} frames, got {feats.shape[-2]}"
            )
        x = feats.transpose(1, 2)
        outputs = []
        for layer in self.layers:
            x = layer(x)
            outputs.append(x)
        emb = self.embed(stats_pool(outputs[-1].transpose(1, 2)))
        frame_map = outputs[tap].transpose(1, 2)
        if single:
            return frame_map[0], emb[0]
        return frame_map, emb


def build_encoder(cfg: EncoderConfig, seed: int = 0) -> nn.Module:
    """Construct an encoder with parameter init isolated on the given seed."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        if cfg.arch == "ecapa":
            return EcapaEncoder(cfg)
        return XVectorEncoder(cfg)
