"""Per-(t, s) PSNR/SSIM evaluation of the network and of a two-stage baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import UsageError
from .imaging import bicubic_resize, psnr, ssim
from .motion import FINet, estimate_flow, fuse
from .network import ScaleTimeQuery
from .training import snap_sizes


def blend_baseline(i0, i1, t, out_h, out_w, flows=None):
    """Flow-warped frames blended by time weights only, then bicubic upsampling."""
    if flows is None:
        flows = (estimate_flow(i0, i1), estimate_flow(i1, i0))
    ft0, ft1 = FINet().intermediate_flows(*flows, t)
    ref = fuse(i0, i1, ft0, ft1, torch.full_like(i0[..., :1, :, :], 0.5), t)
    return bicubic_resize(ref, out_h, out_w).clamp(0, 1)


@dataclass
class EvalRow:
    t: float
    s: float
    psnr: float
    ssim: float


def evaluation_pair(seq, t, s):
    """LR endpoints and the HR target at ``t`` for an exact scale ``s``."""
    h, w = seq.size
    lr_h, lr_w, hr_h, hr_w = snap_sizes(h, w, s)
    gt = seq.crop(t, 0, 0, hr_h, hr_w)
    i0 = bicubic_resize(seq.crop(0.0, 0, 0, hr_h, hr_w), lr_h, lr_w)
    i1 = bicubic_resize(seq.crop(1.0, 0, 0, hr_h, hr_w), lr_h, lr_w)
    return i0, i1, gt


@torch.no_grad()
def evaluate(model, dataset, ts, ss):
    """Mean PSNR/SSIM per ``(t, s)``; ``model=None`` scores :func:`blend_baseline`."""
    if len(dataset) == 0:
        raise UsageError("dataset is empty")
    if model is not None:
        model.eval()
    rows = []
    for t in ts:
        if not 0.0 <= t <= 1.0:
            raise UsageError(f"t must lie in [0, 1], got {t}")
        for s in ss:
            if not 1.0 <= s <= 4.0:
                raise UsageError(f"s must lie in [1, 4], got {s}")
            scores = []
            for seq in dataset:
                i0, i1, gt = evaluation_pair(seq, t, s)
                flows = (estimate_flow(i0, i1), estimate_flow(i1, i0))
                hr_h, hr_w = gt.shape[-2:]
                if model is None:
                    pred = blend_baseline(i0, i1, t, hr_h, hr_w, flows)
                else:
                    pred = model(i0, i1, ScaleTimeQuery(t, hr_h, hr_w), flows=flows)
                gt = gt.clamp(0, 1)
                scores.append((psnr(pred, gt), ssim(pred, gt)))
            p, q = np.mean(scores, axis=0)
            rows.append(EvalRow(t, s, float(p), float(q)))
    return rows
