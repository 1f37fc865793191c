"""Finite-difference gradient checks for every differentiable operator.

Each check builds a small float64 instance with all parameters randomised
(including the ones that are zero-initialised for training, which would
otherwise make most gradients trivially zero).
"""
from __future__ import annotations

import math

import torch

from .blocks import RdbConfig, SARDB, ScaleAwareConv
from .gpl import GplConfig, OffsetNet, channel_interp, gpl_sample
from .imaging import bicubic_resize
from .losses import LossConfig, charbonnier_l1, identity_features, perceptual, total_loss
from .motion import MaskNet, fuse, warp
from .network import EnhanceNet, FeatureExtractor, NetConfig, ReconstructionNet
from .tensor_engine import activation, conv2d, grad_check

TOL = 1e-6


def randomize(module: torch.nn.Module, gen: torch.Generator) -> torch.nn.Module:
    module.double()
    with torch.no_grad():
        for p in module.parameters():
            if p.dim() > 1:
                fan_in = p[0].numel()
                p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * math.sqrt(2.0 / fan_in))
            else:
                p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * 0.2 - 0.1)
    return module


def _u(gen, *shape, lo=-1.0, hi=1.0):
    return torch.rand(shape, generator=gen, dtype=torch.float64) * (hi - lo) + lo


def _functional(module, data, extra=()):
    """Expose module parameters as explicit grad_check inputs ahead of ``data``."""
    names = [n for n, _ in module.named_parameters()]
    params = [p.detach().clone() for p in module.parameters()]
    n = len(names)

    def op(*args):
        return torch.func.functional_call(module, dict(zip(names, args[:n])), tuple(args[n:]) + tuple(extra))

    return op, params + list(data)


class _GplProbe(torch.nn.Module):
    def __init__(self, cfg, out_size):
        super().__init__()
        self.cfg, self.out_size = cfg, out_size
        self.offset = OffsetNet(cfg.c_out, cfg.hidden)

    def forward(self, T):
        return gpl_sample(T, *self.out_size, self.cfg, self.offset)


def check_conv2d(gen):
    x, k, b = _u(gen, 2, 5, 5), _u(gen, 3, 2, 3, 3), _u(gen, 3)
    return grad_check(lambda x, k, b: conv2d(x, k, b, padding=1), [x, k, b], TOL)


def check_activation(gen):
    x = _u(gen, 4, 5, 5)
    return grad_check(lambda x: activation(x, "sigmoid") + activation(x, "leaky_relu", 0.1), [x], TOL)


def check_warp_image(gen):
    img, flow = _u(gen, 3, 6, 6), _u(gen, 2, 6, 6, lo=-2, hi=2)
    return grad_check(lambda im: warp(im, flow), [img], TOL)


def check_warp_flow(gen):
    img, flow = _u(gen, 3, 8, 8), _u(gen, 2, 8, 8, lo=-2, hi=2)
    return grad_check(lambda f: warp(img, f), [flow], TOL)


def check_fuse(gen):
    i0, i1 = _u(gen, 3, 5, 5), _u(gen, 3, 5, 5)
    ft0, ft1 = _u(gen, 2, 5, 5, lo=-1.5, hi=1.5), _u(gen, 2, 5, 5, lo=-1.5, hi=1.5)
    mask = _u(gen, 1, 5, 5, lo=0.1, hi=0.9)
    return grad_check(lambda *a: fuse(*a, 0.37), [i0, i1, ft0, ft1, mask], TOL)


def check_predict_mask(gen):
    net = randomize(MaskNet(6), gen)
    data = [_u(gen, 3, 5, 5), _u(gen, 3, 5, 5), _u(gen, 2, 5, 5), _u(gen, 2, 5, 5)]
    op, inputs = _functional(net, data)
    return grad_check(op, inputs, TOL)


def check_channel_interp(gen):
    T = _u(gen, 8, 5, 5)
    n = 60
    ys = torch.randint(0, 5, (n,), generator=gen)
    xs = torch.randint(0, 5, (n,), generator=gen)
    q = _u(gen, n, lo=-0.8, hi=7.8)

    def op(T, q):
        return torch.stack([channel_interp(T, int(ys[k]), int(xs[k]), q[k]) for k in range(n)])

    return grad_check(op, [T, q], TOL)


def check_gpl_sample(gen):
    cfg = GplConfig(c_in=4, c_inter=12, c_out=3, hidden=8)
    probe = randomize(_GplProbe(cfg, (6, 6)), gen)
    op, inputs = _functional(probe, [_u(gen, cfg.c_inter, 4, 4)])
    return grad_check(op, inputs, TOL)


def check_bicubic(gen):
    x = _u(gen, 2, 7, 8)
    return grad_check(lambda x: bicubic_resize(x, 10, 11), [x], TOL)


def check_scale_aware_conv(gen):
    block = randomize(ScaleAwareConv(4, hidden=5), gen)
    op, inputs = _functional(block, [_u(gen, 4, 5, 5)], extra=(0.4,))
    return grad_check(op, inputs, TOL)


def check_sardb(gen):
    block = randomize(SARDB(RdbConfig(4, 2, 3)), gen)
    op, inputs = _functional(block, [_u(gen, 4, 5, 5)], extra=(0.4,))
    return grad_check(op, inputs, TOL)


def check_extract_features(gen):
    net = randomize(FeatureExtractor(4, 2), gen)
    op, inputs = _functional(net, [_u(gen, 3, 5, 5)])
    return grad_check(op, inputs, TOL)


def check_enhance(gen):
    net = randomize(EnhanceNet(4), gen)
    data = [_u(gen, 4, 5, 5), _u(gen, 4, 5, 5), _u(gen, 4, 5, 5),
            _u(gen, 2, 5, 5, lo=-1.5, hi=1.5), _u(gen, 2, 5, 5, lo=-1.5, hi=1.5)]
    op, inputs = _functional(net, data)
    return grad_check(op, inputs, TOL)


def check_reconstruct(gen):
    cfg = NetConfig(channels=4, extractor_blocks=1, trunk_blocks=4, k=2, rdb_layers=2, growth=3,
                    gpl=GplConfig(4, 10, 2, 6))
    net = randomize(ReconstructionNet(cfg), gen)
    data = [_u(gen, 4, 4, 4), _u(gen, 3, 4, 4)]
    op, inputs = _functional(net, data, extra=(6, 6))
    return grad_check(op, inputs, TOL)


def check_charbonnier(gen):
    pred, gt = _u(gen, 3, 6, 6), _u(gen, 3, 6, 6)
    return grad_check(lambda p, g: charbonnier_l1(p, g), [pred, gt], TOL)


def check_perceptual(gen):
    pred, gt = _u(gen, 3, 6, 6), _u(gen, 3, 6, 6)
    return grad_check(lambda p, g: perceptual(p, g, identity_features), [pred, gt], TOL)


def check_total_loss(gen):
    pred, gt = _u(gen, 3, 6, 6), _u(gen, 3, 6, 6)
    cfg = LossConfig(lam=0.04, perceptual_extractor=identity_features)
    return grad_check(lambda p, g: total_loss(p, g, cfg), [pred, gt], TOL)


CHECKS = {
    "conv2d": check_conv2d,
    "activation": check_activation,
    "bicubic_resize": check_bicubic,
    "warp_image": check_warp_image,
    "warp_flow": check_warp_flow,
    "fuse": check_fuse,
    "predict_mask": check_predict_mask,
    "channel_interp": check_channel_interp,
    "gpl_sample": check_gpl_sample,
    "scale_aware_conv": check_scale_aware_conv,
    "sardb_forward": check_sardb,
    "extract_features": check_extract_features,
    "enhance": check_enhance,
    "reconstruct": check_reconstruct,
    "charbonnier_l1": check_charbonnier,
    "perceptual": check_perceptual,
    "total_loss": check_total_loss,
}


def run_suite(seed: int = 0, names=None):
    """Run the selected checks; returns ``[(name, GradReport), ...]``."""
    results = []
    for name, fn in CHECKS.items():
        if names and name not in names:
            continue
        gen = torch.Generator().manual_seed(seed + sum(map(ord, name)))
        results.append((name, fn(gen)))
    return results
