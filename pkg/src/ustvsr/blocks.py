"""Residual, residual-dense and scale-attentive residual-dense blocks.

Every block ends in a zero-initialised layer so that a freshly built block is the
identity map.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class RdbConfig:
    channels: int = 64
    layers: int = 4
    growth: int = 32


def conv3x3(c_in, c_out, zero=False):
    conv = nn.Conv2d(c_in, c_out, 3, padding=1)
    nn.init.zeros_(conv.bias)
    if zero:
        nn.init.zeros_(conv.weight)
    return conv


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels, zero=True)

    def forward(self, x):
        return x + self.conv2(torch.relu(self.conv1(x)))


class DenseLayers(nn.Module):
    """Dense 3x3 convolutions followed by 1x1 local feature fusion (no residual)."""

    def __init__(self, cfg: RdbConfig):
        super().__init__()
        c, g = cfg.channels, cfg.growth
        self.convs = nn.ModuleList(conv3x3(c + i * g, g) for i in range(cfg.layers))
        self.lff = nn.Conv2d(c + cfg.layers * g, c, 1)
        nn.init.zeros_(self.lff.weight)
        nn.init.zeros_(self.lff.bias)

    def forward(self, x):
        feats = [x]
        for conv in self.convs:
            feats.append(torch.relu(conv(torch.cat(feats, -3))))
        return self.lff(torch.cat(feats, -3))


class RDB(nn.Module):
    def __init__(self, cfg: RdbConfig):
        super().__init__()
        self.dense = DenseLayers(cfg)

    def forward(self, x, inv_s=None):
        return x + self.dense(x)


class ScaleAwareConv(nn.Module):
    """3x3 convolution with per-channel gain and bias conditioned on ``1/s``."""

    def __init__(self, channels: int, hidden: int = 16):
        super().__init__()
        self.channels = channels
        self.conv = conv3x3(channels, channels)
        self.cond = nn.Sequential(nn.Linear(1, hidden), nn.ReLU(), nn.Linear(hidden, 2 * channels))
        nn.init.zeros_(self.cond[2].weight)
        nn.init.zeros_(self.cond[2].bias)

    def modulation(self, inv_s: float):
        p = self.cond(torch.tensor([[float(inv_s)]], dtype=self.conv.weight.dtype))
        gamma, beta = p[0, :self.channels], p[0, self.channels:]
        return gamma.view(-1, 1, 1), beta.view(-1, 1, 1)

    def forward(self, x, inv_s: float):
        gamma, beta = self.modulation(inv_s)
        return (1 + gamma) * self.conv(x) + beta


class SARDB(nn.Module):
    """Residual dense block whose scale-dependent branch is gated by spatial and channel attention."""

    def __init__(self, cfg: RdbConfig):
        super().__init__()
        c = cfg.channels
        self.dense = DenseLayers(cfg)
        self.spatial = conv3x3(c, 1)
        self.channel = nn.Linear(c, c)
        nn.init.zeros_(self.channel.bias)
        self.scale_conv = ScaleAwareConv(c)

    def attention(self, f):
        m_s = torch.sigmoid(self.spatial(f))
        m_c = torch.sigmoid(self.channel(f.mean(dim=(-2, -1))))[..., None, None]
        return m_s, m_c

    def forward(self, x, inv_s: float):
        f = self.dense(x)
        m_s, m_c = self.attention(f)
        return x + f + m_s * m_c * self.scale_conv(f, inv_s)


def residual_block(x, block: ResidualBlock):
    return block(x)


def rdb_forward(x, block: RDB):
    return block(x)


def scale_aware_conv(x, inv_s, block: ScaleAwareConv):
    return block(x, inv_s)


def sardb_forward(x, inv_s, block: SARDB):
    return block(x, inv_s)
