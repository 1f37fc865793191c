"""Standard and generalized pixelshuffle upsampling.

The generalized layer maps ``C_in x H x W`` features to ``C_out x out_h x out_w``
for any ``out_h >= H``: every output element reads the widened intermediate
tensor ``T`` at the projected cell ``(floor(i/s), floor(j/s))`` and at a
fractional channel position ``p_c + dp_c``, linearly interpolated along the
channel axis.  ``dp_c`` is produced by a small MLP fed with the sub-cell phase
and ``1/s``.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import UsageError


@dataclass
class GplConfig:
    c_in: int = 64
    c_inter: int = 320
    c_out: int = 64
    hidden: int = 64

    def __post_init__(self):
        if min(self.c_in, self.c_inter, self.c_out, self.hidden) < 1:
            raise UsageError("GPL channel counts must be positive")


def project_location(i, j, s):
    if s <= 0:
        raise UsageError("scale must be positive")
    return i / s, j / s


def spl(T: torch.Tensor, s: int) -> torch.Tensor:
    """Depth-to-space with channel index ``C_out*s*(i mod s) + C_out*(j mod s) + c``."""
    if int(s) != s or s < 1:
        raise UsageError(f"standard pixelshuffle needs an integer scale, got {s}")
    s = int(s)
    *lead, ch, h, w = T.shape
    if ch % (s * s):
        raise UsageError(f"{ch} channels is not a multiple of s^2={s * s}")
    c_out = ch // (s * s)
    x = T.reshape(*lead, s, s, c_out, h, w)
    n = len(lead)
    # (lead, a, b, c, h, w) -> (lead, c, h, a, w, b)
    perm = list(range(n)) + [n + 2, n + 3, n + 0, n + 4, n + 1]
    return x.permute(perm).reshape(*lead, c_out, h * s, w * s)


def spl_channel_index(i, j, c, s: int, c_out: int):
    return c_out * s * (i % s) + c_out * (j % s) + c


class OffsetNet(nn.Module):
    """MLP ``(frac_i, frac_j, 1/s) -> dp`` with one offset per output channel."""

    def __init__(self, c_out: int, hidden: int = 64):
        super().__init__()
        self.fc1 = nn.Linear(3, hidden)
        self.fc2 = nn.Linear(hidden, c_out)
        nn.init.zeros_(self.fc2.weight)
        nn.init.zeros_(self.fc2.bias)

    @staticmethod
    def _affine(x, layer):
        # broadcast-and-sum instead of a matmul: each row is reduced on its own, so a
        # batched call is bit-identical to evaluating the rows one at a time
        return (x.unsqueeze(-2) * layer.weight).sum(-1) + layer.bias

    def forward(self, x):
        return self._affine(torch.relu(self._affine(x, self.fc1)), self.fc2)


def offset_net_eval(frac_i, frac_j, inv_s, net: OffsetNet):
    x = torch.tensor([frac_i, frac_j, inv_s], dtype=net.fc1.weight.dtype)
    return net(x)


def channel_interp(T, yi, xj, q):
    """``sum_k max(0, 1 - |q - k|) * T[k, yi, xj]`` over every channel ``k`` of ``T``."""
    col = T[:, yi, xj]
    k = torch.arange(T.shape[0], dtype=col.dtype)
    q = torch.as_tensor(q, dtype=col.dtype)
    return (torch.clamp(1 - (q - k).abs(), min=0) * col).sum()


def default_positions(config: GplConfig) -> torch.Tensor:
    ratio = config.c_inter / config.c_out
    return torch.arange(config.c_out, dtype=torch.float64) * ratio + (ratio - 1) / 2


def _phase(n_in: int, n_out: int):
    # exact floor(i/s) and its fractional remainder, with s = n_out / n_in
    idx = torch.arange(n_out) * n_in
    return idx // n_out, (idx % n_out).double() / n_out


def sampling_grid(h, w, out_h, out_w):
    """Source cells and fractional phases of every output pixel."""
    rows, fi = _phase(h, out_h)
    cols, fj = _phase(w, out_w)
    return rows, cols, fi, fj


def offsets(net: OffsetNet | None, fi, fj, inv_s, c_out, dtype, cached=True):
    """Offsets ``dp`` as a ``C_out x out_h x out_w`` tensor."""
    out_h, out_w = len(fi), len(fj)
    if net is None:
        return torch.zeros(c_out, out_h, out_w, dtype=dtype)
    if cached:
        # one MLP call per unique (frac_i, frac_j) pair, broadcast back to pixels
        ui, inv_i = torch.unique(fi, return_inverse=True)
        uj, inv_j = torch.unique(fj, return_inverse=True)
        gi, gj = torch.meshgrid(ui, uj, indexing="ij")
        feats = torch.stack([gi, gj, torch.full_like(gi, inv_s)], -1).to(dtype)
        table = net(feats.reshape(-1, 3)).reshape(len(ui), len(uj), c_out)
        d = table[inv_i][:, inv_j]
    else:
        gi, gj = torch.meshgrid(fi, fj, indexing="ij")
        feats = torch.stack([gi, gj, torch.full_like(gi, inv_s)], -1).to(dtype)
        d = torch.stack([net(v) for v in feats.reshape(-1, 3)]).reshape(out_h, out_w, c_out)
    return d.permute(2, 0, 1)


def gpl_sample(T: torch.Tensor, out_h: int, out_w: int, config: GplConfig,
               offset_net: OffsetNet | None = None, positions=None, cached=True) -> torch.Tensor:
    """Generalized pixelshuffle sampling of ``T`` (``[N x] C_inter x H x W``).

    ``offset_net=None`` forces zero offsets.  ``positions`` overrides the base
    channel positions; it must broadcast to ``C_out x out_h x out_w``.
    """
    sq = T.dim() == 3
    if sq:
        T = T.unsqueeze(0)
    n, c_inter, h, w = T.shape
    if c_inter != config.c_inter:
        raise UsageError(f"expected {config.c_inter} intermediate channels, got {c_inter}")
    if out_h < h or out_w < w:
        raise UsageError("GPL output must be at least as large as its input")
    c_out = config.c_out
    rows, cols, fi, fj = sampling_grid(h, w, out_h, out_w)
    inv_s = h / out_h
    if positions is None:
        positions = default_positions(config).view(c_out, 1, 1)
    q = torch.as_tensor(positions, dtype=T.dtype).expand(c_out, out_h, out_w)
    q = q + offsets(offset_net, fi, fj, inv_s, c_out, T.dtype, cached)

    k0 = q.detach().floor()
    frac = q - k0
    k0 = k0.long()
    spatial = (rows.view(-1, 1) * w + cols.view(1, -1)).expand(c_out, out_h, out_w)
    flat = T.reshape(n, c_inter * h * w)

    def read(k):
        ok = (k >= 0) & (k < c_inter)
        idx = (k.clamp(0, c_inter - 1) * (h * w) + spatial).reshape(1, -1).expand(n, -1)
        vals = flat.gather(1, idx).reshape(n, c_out, out_h, out_w)
        return vals * ok

    out = (1 - frac) * read(k0) + frac * read(k0 + 1)
    return out.squeeze(0) if sq else out


class GPL(nn.Module):
    """Widen convolution followed by generalized pixelshuffle sampling."""

    def __init__(self, config: GplConfig, learn_offsets: bool = True):
        super().__init__()
        self.config = config
        self.widen = nn.Conv2d(config.c_in, config.c_inter, 3, padding=1)
        nn.init.zeros_(self.widen.bias)
        self.offset = OffsetNet(config.c_out, config.hidden) if learn_offsets else None

    def forward(self, x, out_h, out_w):
        return gpl_sample(self.widen(x), out_h, out_w, self.config, self.offset)


def widen(x, gpl: GPL):
    return gpl.widen(x)
