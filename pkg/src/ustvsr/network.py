"""End-to-end space-time super-resolution network.

``USTVSRNet`` chains frame interpolation at low resolution, a shared feature
extractor, feature-level enhancement guided by the intermediate flows, and an
RDN-style reconstruction trunk whose generalized pixelshuffle head upsamples to
any requested output size.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn

from .blocks import RDB, SARDB, RdbConfig, ResidualBlock, conv3x3
from .errors import UsageError
from .gpl import GPL, GplConfig
from .imaging import bicubic_resize
from .motion import FINet, warp


@dataclass(frozen=True)
class ScaleTimeQuery:
    t: float
    out_height: int
    out_width: int

    def scale(self, in_height: int) -> float:
        return self.out_height / in_height


@dataclass
class NetConfig:
    channels: int = 64
    extractor_blocks: int = 5
    trunk_blocks: int = 8
    k: int = 4
    rdb_layers: int = 4
    growth: int = 32
    gpl: GplConfig = field(default_factory=lambda: GplConfig(64, 320, 64, 64))
    learn_offsets: bool = True
    mask_width: int = 16
    flow_backend: str = "classical"

    def __post_init__(self):
        if isinstance(self.gpl, dict):
            self.gpl = GplConfig(**self.gpl)
        if self.trunk_blocks < self.k:
            raise UsageError("trunk must hold at least K blocks")
        if self.gpl.c_in != self.channels:
            raise UsageError("GPL input channels must equal the feature width")

    @classmethod
    def toy(cls, **overrides):
        """Reduced model used for the CPU-scale training experiments."""
        base = dict(channels=32, extractor_blocks=2, trunk_blocks=4, k=4, rdb_layers=3, growth=16,
                    gpl=GplConfig(32, 160, 32, 64))
        base.update(overrides)
        return cls(**base)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        return cls(**json.loads(text))


class FeatureExtractor(nn.Module):
    def __init__(self, channels: int, blocks: int):
        super().__init__()
        self.head = conv3x3(3, channels)
        self.blocks = nn.Sequential(*(ResidualBlock(channels) for _ in range(blocks)))

    def forward(self, frame):
        return self.blocks(self.head(frame))


class EnhanceNet(nn.Module):
    """Motion features, flow-guided prediction of the intermediate features, residual refinement."""

    def __init__(self, c: int):
        super().__init__()
        self.net_m = nn.Sequential(conv3x3(4, c), nn.ReLU(), conv3x3(c, c), nn.ReLU())
        self.net_p = nn.Sequential(conv3x3(3 * c, c), nn.ReLU(), conv3x3(c, c), nn.ReLU(), conv3x3(c, c))
        self.net_r = nn.Sequential(conv3x3(2 * c, c), nn.ReLU(), conv3x3(c, c, zero=True))

    def forward(self, f0, ft, f1, ft0, ft1):
        m = self.net_m(torch.cat([ft0, ft1], -3))
        ft_pred = self.net_p(torch.cat([warp(f0, ft0), warp(f1, ft1), m], -3))
        return ft + self.net_r(torch.cat([ft, ft_pred], -3))


class ReconstructionNet(nn.Module):
    def __init__(self, cfg: NetConfig):
        super().__init__()
        rdb = RdbConfig(cfg.channels, cfg.rdb_layers, cfg.growth)
        self.trunk = nn.ModuleList(
            SARDB(rdb) if (i + 1) % cfg.k == 0 else RDB(rdb) for i in range(cfg.trunk_blocks)
        )
        self.gff = nn.Conv2d(cfg.trunk_blocks * cfg.channels, cfg.channels, 1)
        nn.init.zeros_(self.gff.bias)
        self.upsample = GPL(cfg.gpl, learn_offsets=cfg.learn_offsets)
        self.tail = conv3x3(cfg.gpl.c_out, 3, zero=True)

    def forward(self, e, ref, out_h: int, out_w: int, clamp: bool = False):
        h, w = e.shape[-2:]
        if abs(out_h / h - out_w / w) > 1e-6:
            raise UsageError(f"non-uniform scale: {out_h}/{h} vs {out_w}/{w}")
        inv_s = h / out_h
        x, outs = e, []
        for block in self.trunk:
            x = block(x, inv_s)
            outs.append(x)
        feat = e + self.gff(torch.cat(outs, -3))
        out = self.tail(self.upsample(feat, out_h, out_w)) + bicubic_resize(ref, out_h, out_w)
        return out.clamp(0, 1) if clamp else out


class USTVSRNet(nn.Module):
    def __init__(self, cfg: NetConfig | None = None):
        super().__init__()
        self.cfg = cfg or NetConfig()
        self.finet = FINet(self.cfg.mask_width)
        self.extractor = FeatureExtractor(self.cfg.channels, self.cfg.extractor_blocks)
        self.enhance = EnhanceNet(self.cfg.channels)
        self.reconstruct = ReconstructionNet(self.cfg)

    def forward(self, i0, i1, query: ScaleTimeQuery, flows=None, clamp=None):
        """Synthesize the high-resolution frame at ``query.t``.

        ``i0``/``i1`` are ``N x 3 x H x W`` (or unbatched); ``flows`` optionally
        supplies precomputed ``(f01, f10)``.  Output is clamped to [0, 1] unless
        the module is in training mode.
        """
        sq = i0.dim() == 3
        if sq:
            i0, i1 = i0.unsqueeze(0), i1.unsqueeze(0)
            if flows is not None:
                flows = tuple(f.unsqueeze(0) if f.dim() == 3 else f for f in flows)
        h, w = i0.shape[-2:]
        if query.out_height < h or query.out_width < w:
            raise UsageError("output size must be at least the input size")
        if clamp is None:
            clamp = not self.training
        ref, ft0, ft1 = self.finet(i0, i1, query.t, flows=flows, backend=self.cfg.flow_backend)
        n = i0.shape[0]
        feats = self.extractor(torch.cat([i0, ref, i1], 0))
        f0, ft, f1 = feats[:n], feats[n:2 * n], feats[2 * n:]
        e = self.enhance(f0, ft, f1, ft0, ft1)
        out = self.reconstruct(e, ref, query.out_height, query.out_width, clamp=clamp)
        return out.squeeze(0) if sq else out


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def extract_features(frame, net: FeatureExtractor):
    return net(frame)


def enhance(f0, ft, f1, ft0, ft1, net: EnhanceNet):
    return net(f0, ft, f1, ft0, ft1)


def reconstruct(e, ref, out_h, out_w, net: ReconstructionNet, clamp=False):
    return net(e, ref, out_h, out_w, clamp=clamp)
