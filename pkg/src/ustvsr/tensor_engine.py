"""Numeric substrate: thin wrappers over torch plus a finite-difference gradient checker.

Tensors are plain ``torch.Tensor`` objects.  Analytic gradients come from torch's
reverse-mode tape; :func:`grad_check` verifies them independently with central
finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F


class ConfigurationError(ValueError):
    """Raised when tensor shapes or hyper-parameters are inconsistent."""


def conv2d(x, kernel, bias=None, stride=1, padding=0, padding_mode="zeros"):
    """2-D cross-correlation over ``C_in x H x W`` (or batched ``N x C_in x H x W``) input."""
    squeeze = x.dim() == 3
    if squeeze:
        x = x.unsqueeze(0)
    if x.shape[1] != kernel.shape[1]:
        raise ConfigurationError(
            f"conv2d: input has {x.shape[1]} channels but kernel expects {kernel.shape[1]}"
        )
    if padding and padding_mode != "zeros":
        x = F.pad(x, (padding,) * 4, mode=padding_mode)
        padding = 0
    out = F.conv2d(x, kernel, bias, stride=stride, padding=padding)
    return out.squeeze(0) if squeeze else out


def activation(x, kind="relu", alpha=0.1):
    if kind == "relu":
        return torch.relu(x)
    if kind == "leaky_relu":
        return F.leaky_relu(x, alpha)
    if kind == "sigmoid":
        return torch.sigmoid(x)
    raise ConfigurationError(f"unknown activation {kind!r}")


@dataclass
class GradReport:
    max_abs_err: float
    max_rel_err: float
    num_points: int
    passed: bool
    tol: float = 0.0
    num_rejected: int = 0
    message: str = ""
    worst: dict = field(default_factory=dict)

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        text = (f"{status} points={self.num_points} rejected={self.num_rejected} "
                f"max_abs={self.max_abs_err:.3e} max_rel={self.max_rel_err:.3e} tol={self.tol:.0e}")
        if self.message:
            text += f" ({self.message})"
        return text


def _reduce(out):
    if not torch.is_tensor(out):
        return torch.as_tensor(out, dtype=torch.float64)
    return out.sum() if out.dim() else out


def grad_check(op: Callable[..., torch.Tensor], inputs: Sequence[torch.Tensor], tol: float = 1e-6,
               n_points: int = 100, h: float = 1e-5, seed: int = 0,
               floor: float = 1e-4, max_reject_frac: float = 0.5) -> GradReport:
    """Compare autograd gradients of ``sum(op(*inputs))`` against central differences.

    ``op`` may return a scalar or a tensor; tensors are reduced by summation.
    Differences are taken on the output tensors before reduction, which keeps
    round-off far below the tolerance.

    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.

    A coordinate is rejected as kink-adjacent (and replaced by a fresh draw) when
    the estimates with steps ``h`` and ``h/2`` disagree by more than ``tol/2`` in
    that same relative measure; for a function smooth on ``[x-h, x+h]`` the two
    agree to ``O(h^2)``, so only points within ``h`` of a non-differentiable
    point are discarded.
    """
    inputs = list(inputs)
    for t in inputs:
        if t.dtype != torch.float64:
            raise ConfigurationError("grad_check requires float64 inputs")
    leaves = [t.detach().clone().requires_grad_(True) for t in inputs]
    out = _reduce(op(*leaves))
    grads = torch.autograd.grad(out, leaves, allow_unused=True)
    grads = [torch.zeros_like(t) if g is None else g.detach() for t, g in zip(leaves, grads)]
    if not all(torch.isfinite(g).all() for g in grads):
        return GradReport(float("inf"), float("inf"), 0, False, tol, message="non-finite analytic gradient")

    work = [t.detach().clone() for t in inputs]
    sizes = np.array([t.numel() for t in work])
    total = int(sizes.sum())
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)

    def evaluate():
        with torch.no_grad():
            r = op(*work)
            return r if torch.is_tensor(r) else torch.as_tensor(r, dtype=torch.float64)

    def central(k, flat_idx, step):
        flat = work[k].view(-1)
        orig = flat[flat_idx].item()
        flat[flat_idx] = orig + step
        plus = evaluate()
        flat[flat_idx] = orig - step
        minus = evaluate()
        flat[flat_idx] = orig
        return ((plus - minus).sum() / (2 * step)).item()

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), floor)

    # a few coordinates from every input first, then the rest in random order without repeats
    forced = []
    for k, n in enumerate(sizes):
        forced += [int(offsets[k] + i) for i in rng.choice(n, size=min(n, 3), replace=False)]
    seen = set(forced)
    order = forced + [int(i) for i in rng.permutation(total) if int(i) not in seen]
    max_abs = max_rel = 0.0
    accepted = rejected = 0
    worst = {}
    target = max(min(n_points, total), len(forced))
    for g_idx in order:
        if accepted >= target:
            break
        k = int(np.searchsorted(offsets, g_idx, side="right") - 1)
        idx = g_idx - int(offsets[k])
        fd = central(k, idx, h)
        fd_half = central(k, idx, h / 2)
        if not (np.isfinite(fd) and np.isfinite(fd_half)):
            return GradReport(float("inf"), float("inf"), accepted, False, tol, rejected,
                              message=f"non-finite numeric gradient at input {k} index {idx}")
        if rel(fd, fd_half) > tol / 2:
            rejected += 1
            if rejected > max_reject_frac * (accepted + rejected) and rejected > 20:
                return GradReport(max_abs, max_rel, accepted, False, tol, rejected,
                                  message="too many kink-adjacent points")
            continue
        a = grads[k].view(-1)[idx].item()
        err = abs(a - fd)
        r = rel(a, fd)
        max_abs = max(max_abs, err)
        if r > max_rel:
            max_rel = r
            worst = {"input": k, "index": idx, "analytic": a, "numeric": fd}
        accepted += 1
    if accepted < target:
        return GradReport(max_abs, max_rel, accepted, False, tol, rejected,
                          message=f"only {accepted} of {target} points usable")
    return GradReport(max_abs, max_rel, accepted, max_rel <= tol, tol, rejected, worst=worst)
