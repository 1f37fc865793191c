"""Image I/O, Catmull-Rom bicubic resampling and PSNR/SSIM metrics.

Frames are float tensors laid out channels-first (``3 x H x W``, or batched
``N x 3 x H x W``) with values in [0, 1].  Files on disk are 8-bit RGB PNGs.
"""
from __future__ import annotations

import math
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import UsageError

PSNR_CAP = 99.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def read_image(path) -> torch.Tensor:
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.mode not in ("RGB", "RGBA", "L", "P"):
                raise OSError(f"unsupported image mode {im.mode}")
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    return torch.from_numpy(arr.astype(np.float32) / 255.0).permute(2, 0, 1).contiguous()


def to_bytes(frame) -> np.ndarray:
    """Quantise a ``3 x H x W`` frame to an ``H x W x 3`` uint8 array."""
    arr = frame.detach().cpu().double().numpy() if torch.is_tensor(frame) else np.asarray(frame, float)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise UsageError("frame values must lie in [0, 1] before writing")
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)


def write_image(path, frame) -> None:
    path = Path(path)
    data = to_bytes(frame)
    try:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write image {path}: {exc}") from exc


def cubic_kernel(x, a: float = -0.5):
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


@lru_cache(maxsize=256)
def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel-centred source coordinates, taps clamped to the valid range
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    base = np.floor(src).astype(np.int64)
    mat = np.zeros((n_out, n_in))
    for k in range(-1, 3):
        idx = base + k
        w = cubic_kernel(src - idx)
        np.add.at(mat, (np.arange(n_out), np.clip(idx, 0, n_in - 1)), w)
    return mat


def resize_matrix(n_in: int, n_out: int, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(_resize_matrix(int(n_in), int(n_out))).to(dtype)


def bicubic_resize(img: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
    """Separable Catmull-Rom resampling of the last two axes."""
    if out_h < 1 or out_w < 1:
        raise UsageError("output size must be at least 1x1")
    h, w = img.shape[-2:]
    if (h, w) == (out_h, out_w):
        return img.clone()
    rh = resize_matrix(h, out_h, img.dtype)
    rw = resize_matrix(w, out_w, img.dtype)
    return rh @ img @ rw.T


def _check_same(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise UsageError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def psnr(a, b) -> float:
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    _check_same(a, b)
    mse = torch.mean((a.double() - b.double()) ** 2).item()
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * math.log10(1.0 / mse)


def luma(frame: torch.Tensor) -> torch.Tensor:
    if frame.dim() == 2:
        return frame
    if frame.shape[-3] != 3:
        raise UsageError("luma expects a 3-channel frame")
    r, g, b = frame.unbind(-3)
    return LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b


def gaussian_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-x ** 2 / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over valid windows of the BT.601 luma channel (dynamic range 1)."""
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    _check_same(a, b)
    ya, yb = luma(a.double()), luma(b.double())
    if min(ya.shape[-2:]) < window:
        raise UsageError(f"image smaller than the {window}x{window} SSIM window")
    ya = ya.reshape(-1, 1, *ya.shape[-2:])
    yb = yb.reshape(-1, 1, *yb.shape[-2:])
    w = gaussian_window(window, sigma)[None, None]
    c1, c2 = k1 ** 2, k2 ** 2
    mu_a, mu_b = F.conv2d(ya, w), F.conv2d(yb, w)
    var_a = F.conv2d(ya * ya, w) - mu_a ** 2
    var_b = F.conv2d(yb * yb, w) - mu_b ** 2
    cov = F.conv2d(ya * yb, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return (num / den).mean().item()
