"""Flow estimation, flow reversal, backward warping and the frame-interpolation network.

Flow fields are ``2 x H x W`` tensors (or batched ``N x 2 x H x W``); channel 0
holds the horizontal displacement ``u`` and channel 1 the vertical ``v``, both
in pixels.  ``f_{a->b}(x)`` points from a pixel of frame ``a`` to where that
content sits in frame ``b``.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import FormatError, UsageError
from .imaging import bicubic_resize, luma

FLO_MAGIC = 202021.25
MASK_EPS = 1e-3
FUSE_EPS = 1e-8


def _batched(x):
    return (x, False) if x.dim() == 4 else (x.unsqueeze(0), True)


# --------------------------------------------------------------------------- I/O

def write_flo(path, flow: torch.Tensor) -> None:
    """Write a ``2 x H x W`` flow in the Middlebury ``.flo`` layout."""
    flow = flow.detach().cpu()
    _, h, w = flow.shape
    data = flow.permute(1, 2, 0).numpy().astype("<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<fii", FLO_MAGIC, w, h))
        fh.write(data.tobytes())


def read_flo(path) -> torch.Tensor:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read flow file {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != b"PIEH":
        raise FormatError(f"{path}: not a .flo file (bad magic)")
    w, h = struct.unpack("<ii", raw[4:12])
    if w <= 0 or h <= 0 or len(raw) != 12 + 8 * w * h:
        raise OSError(f"{path}: truncated or inconsistent .flo file")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(h, w, 2)
    flow = torch.from_numpy(data.astype(np.float32)).permute(2, 0, 1).contiguous()
    if not torch.isfinite(flow).all() or flow.abs().max() > max(h, w):
        raise FormatError(f"{path}: flow values non-finite or beyond the image extent")
    return flow


# --------------------------------------------------------------------- warping

def warp(x: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward bilinear warp: ``out(p) = x(p + flow(p))`` with border clamping."""
    x, sq = _batched(x)
    flow, _ = _batched(flow)
    n, c, h, w = x.shape
    if flow.shape[-2:] != (h, w):
        raise UsageError("warp: flow and image spatial shapes differ")
    ys = torch.arange(h, dtype=x.dtype).view(1, h, 1)
    xs = torch.arange(w, dtype=x.dtype).view(1, 1, w)
    px = (xs + flow[:, 0]).clamp(0, w - 1)
    py = (ys + flow[:, 1]).clamp(0, h - 1)
    x0 = px.detach().floor().clamp(max=w - 1)
    y0 = py.detach().floor().clamp(max=h - 1)
    wx = px - x0
    wy = py - y0
    # the clamp only matters for non-finite flows, whose integer casts are arbitrary
    x0l, y0l = x0.long().clamp(0, w - 1), y0.long().clamp(0, h - 1)
    x1l = (x0l + 1).clamp(max=w - 1)
    y1l = (y0l + 1).clamp(max=h - 1)
    flat = x.reshape(n, c, h * w)

    def tap(yi, xi):
        idx = (yi * w + xi).reshape(n, 1, h * w).expand(n, c, h * w)
        return flat.gather(2, idx).reshape(n, c, h, w)

    wx, wy = wx.unsqueeze(1), wy.unsqueeze(1)
    out = ((1 - wy) * ((1 - wx) * tap(y0l, x0l) + wx * tap(y0l, x1l))
           + wy * ((1 - wx) * tap(y1l, x0l) + wx * tap(y1l, x1l)))
    return out.squeeze(0) if sq else out


def scale_flow(flow: torch.Tensor, t: float) -> torch.Tensor:
    return flow * t


# ---------------------------------------------------------------- flow reversal

def splat_flow(f0t: torch.Tensor, sigma: float = 0.5, radius: float = 1.0):
    """Gaussian forward splat of ``-f0t`` onto the integer grid.

    Returns ``(numerator, weight)``: ``numerator`` is ``N x 2 x H x W``,
    ``weight`` is ``N x 1 x H x W``.
    """
    f, _ = _batched(f0t)
    n, _, h, w = f.shape
    ys = torch.arange(h, dtype=f.dtype).view(1, h, 1)
    xs = torch.arange(w, dtype=f.dtype).view(1, 1, w)
    dx = xs + f[:, 0]
    dy = ys + f[:, 1]
    bx = dx.detach().floor().long()
    by = dy.detach().floor().long()
    num = f.new_zeros(n, 2, h * w)
    den = f.new_zeros(n, 1, h * w)
    values = -f.reshape(n, 2, h * w)
    for oy in (-1, 0, 1, 2):
        for ox in (-1, 0, 1, 2):
            tx, ty = bx + ox, by + oy
            d2 = (dx - tx) ** 2 + (dy - ty) ** 2
            ok = (d2 <= radius ** 2) & (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)
            wgt = torch.exp(-d2 / sigma ** 2) * ok
            idx = (ty.clamp(0, h - 1) * w + tx.clamp(0, w - 1)).reshape(n, 1, h * w)
            wgt = wgt.reshape(n, 1, h * w)
            den = den.scatter_add(2, idx, wgt)
            num = num.scatter_add(2, idx.expand(n, 2, h * w), values * wgt)
    return num.reshape(n, 2, h, w), den.reshape(n, 1, h, w)


def fill_holes(flow: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Fill invalid pixels by repeated 3x3 averaging over valid neighbours."""
    flow = flow * valid
    valid = valid.to(flow.dtype)
    box = torch.ones(1, 1, 3, 3, dtype=flow.dtype)
    n = flow.shape[0]
    for _ in range(max(flow.shape[-2:])):
        if bool((valid > 0).all()):
            break
        cnt = F.conv2d(valid, box, padding=1)
        acc = F.conv2d((flow * valid).reshape(-1, 1, *flow.shape[-2:]), box, padding=1)
        acc = acc.reshape(n, 2, *flow.shape[-2:])
        grow = (valid == 0) & (cnt > 0)
        flow = torch.where(grow, acc / cnt.clamp(min=1), flow)
        valid = torch.where(grow, torch.ones_like(valid), valid)
    return flow * valid


def reverse_flow(f0t: torch.Tensor, fill: bool = True) -> torch.Tensor:
    """Turn a flow anchored at time 0 into the flow anchored at time t pointing back to 0."""
    sq = f0t.dim() == 3
    num, den = splat_flow(f0t)
    valid = den > 0
    out = num / den.clamp(min=1e-12) * valid
    if fill:
        out = fill_holes(out, valid)
    return out.squeeze(0) if sq else out


# --------------------------------------------------------------- Horn-Schunck

_HS_AVG = torch.tensor([[1 / 12, 1 / 6, 1 / 12], [1 / 6, 0.0, 1 / 6], [1 / 12, 1 / 6, 1 / 12]])


def _gradients(img):
    pad = F.pad(img, (1, 1, 1, 1), mode="replicate")
    ix = 0.5 * (pad[..., 1:-1, 2:] - pad[..., 1:-1, :-2])
    iy = 0.5 * (pad[..., 2:, 1:-1] - pad[..., :-2, 1:-1])
    return ix, iy


def horn_schunck(i0: torch.Tensor, i1: torch.Tensor, alpha: float = 15.0, iterations: int = 100,
                 levels: int = 3) -> torch.Tensor:
    """Coarse-to-fine Horn-Schunck flow ``f_{0->1}`` between two frames.

    Intensities are compared on the 0..255 luma scale so that ``alpha`` keeps its
    classical meaning.  Each level warps ``i1`` by the upsampled coarse flow and
    solves the linearised problem for the total flow.
    """
    i0, sq = _batched(i0)
    i1, _ = _batched(i1)
    g0 = luma(i0.double()).unsqueeze(1) * 255.0
    g1 = luma(i1.double()).unsqueeze(1) * 255.0
    pyramid = [(g0, g1)]
    for _ in range(levels - 1):
        h, w = pyramid[-1][0].shape[-2:]
        if min(h, w) < 8:
            break
        nh, nw = (h + 1) // 2, (w + 1) // 2
        pyramid.append((bicubic_resize(pyramid[-1][0], nh, nw), bicubic_resize(pyramid[-1][1], nh, nw)))
    avg = _HS_AVG.to(torch.float64).view(1, 1, 3, 3)
    flow = None
    for a, b in reversed(pyramid):
        h, w = a.shape[-2:]
        if flow is None:
            flow = a.new_zeros(a.shape[0], 2, h, w)
        else:
            ph, pw = flow.shape[-2:]
            flow = bicubic_resize(flow, h, w)
            flow = torch.stack([flow[:, 0] * (w / pw), flow[:, 1] * (h / ph)], 1)
        bw = warp(b, flow)
        ix, iy = _gradients(0.5 * (a + bw))
        it = bw - a
        u0, v0 = flow[:, :1], flow[:, 1:]
        resid = it - ix * u0 - iy * v0
        denom = alpha ** 2 + ix ** 2 + iy ** 2
        u, v = u0, v0
        for _ in range(iterations):
            ub = F.conv2d(F.pad(u, (1, 1, 1, 1), mode="replicate"), avg)
            vb = F.conv2d(F.pad(v, (1, 1, 1, 1), mode="replicate"), avg)
            k = (ix * ub + iy * vb + resid) / denom
            u = ub - ix * k
            v = vb - iy * k
        flow = torch.cat([u, v], 1)
    flow = flow.to(i0.dtype)
    return flow.squeeze(0) if sq else flow


def estimate_flow(i0, i1, backend="classical", path=None) -> torch.Tensor:
    """Dense flow ``f_{0->1}``; ``backend='precomputed'`` loads ``path`` instead."""
    if i0.shape != i1.shape:
        raise UsageError("estimate_flow: frames differ in shape")
    if backend == "classical":
        return horn_schunck(i0, i1)
    if backend == "precomputed":
        if path is None:
            raise OSError("precomputed flow backend needs a flow file")
        flow = read_flo(path)
        if flow.shape[-2:] != i0.shape[-2:]:
            raise OSError(f"{path}: flow resolution {tuple(flow.shape[-2:])} does not match "
                          f"frames {tuple(i0.shape[-2:])}")
        return flow
    raise UsageError(f"unknown flow backend {backend!r}")


# ------------------------------------------------------------- mask and fusion

class MaskNet(nn.Sequential):
    """Small CNN predicting the blending mask from warped frames and flows."""

    def __init__(self, width: int = 16):
        super().__init__(
            nn.Conv2d(10, width, 3, padding=1), nn.LeakyReLU(0.1),
            nn.Conv2d(width, width, 3, padding=1), nn.LeakyReLU(0.1),
            nn.Conv2d(width, 1, 3, padding=1),
        )
        for m in self:
            if isinstance(m, nn.Conv2d):
                nn.init.zeros_(m.bias)

    def forward(self, w0, w1, ft0, ft1):
        x = torch.cat([w0, w1, ft0, ft1], dim=-3)
        return torch.sigmoid(super().forward(x)).clamp(MASK_EPS, 1 - MASK_EPS)


def predict_mask(w0, w1, ft0, ft1, net: MaskNet):
    return net(w0, w1, ft0, ft1)


def fuse(i0, i1, ft0, ft1, mask, t: float):
    """Time- and mask-weighted blend of the two backward-warped frames."""
    a = (1 - t) * mask
    b = t * (1 - mask)
    return (a * warp(i0, ft0) + b * warp(i1, ft1)) / (a + b + FUSE_EPS)


class FINet(nn.Module):
    """Flow-based low-resolution frame interpolation."""

    def __init__(self, mask_width: int = 16):
        super().__init__()
        self.mask = MaskNet(mask_width)

    def intermediate_flows(self, f01, f10, t: float):
        ft0 = reverse_flow(scale_flow(f01, t))
        ft1 = reverse_flow(scale_flow(f10, 1 - t))
        return ft0, ft1

    def forward(self, i0, i1, t: float, flows=None, backend="classical"):
        """Return ``(frame_t, f_t0, f_t1)``; ``flows`` optionally supplies ``(f01, f10)``."""
        if not 0.0 <= t <= 1.0:
            raise UsageError(f"t must lie in [0, 1], got {t}")
        if flows is None:
            with torch.no_grad():
                f01 = estimate_flow(i0, i1, backend).to(i0.dtype)
                f10 = estimate_flow(i1, i0, backend).to(i0.dtype)
        else:
            f01, f10 = (f.to(i0.dtype) for f in flows)
        ft0, ft1 = self.intermediate_flows(f01, f10, t)
        mask = self.mask(warp(i0, ft0), warp(i1, ft1), ft0, ft1)
        return fuse(i0, i1, ft0, ft1, mask, t), ft0, ft1


def finet_forward(i0, i1, t, net: FINet, flows=None, backend="classical"):
    return net(i0, i1, t, flows=flows, backend=backend)
