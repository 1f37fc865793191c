"""Datasets, (t, s)-randomised batches, Adam and the training loop."""
from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
import torch

from .checkpoint import Checkpoint
from .errors import UsageError
from .imaging import bicubic_resize, read_image, write_image
from .losses import LossConfig, total_loss
from .network import NetConfig, ScaleTimeQuery, USTVSRNet

log = logging.getLogger(__name__)

T_GRID = tuple(k / 8 for k in range(9))


class TrainingError(RuntimeError):
    pass


# ------------------------------------------------------------------- datasets

@dataclass
class SyntheticSequence:
    """Band-limited texture translating at constant velocity; exact at any ``t``."""

    freqs: np.ndarray       # (8, 2) cycles per pixel along (x, y)
    phases: np.ndarray      # (8,)
    amps: np.ndarray        # (8, 3)
    velocity: np.ndarray    # (2,) pixels per unit time along (x, y)
    size: tuple
    source: str = "synthetic"

    def texture(self, x, y):
        """Base texture at (possibly fractional) pixel coordinates; returns ``3 x ...``."""
        arg = 2 * np.pi * (self.freqs[:, 0, None, None] * x[None] + self.freqs[:, 1, None, None] * y[None])
        waves = np.sin(arg + self.phases[:, None, None])
        return 0.5 + np.einsum("kc,khw->chw", self.amps, waves)

    def crop(self, t, top=0, left=0, height=None, width=None) -> torch.Tensor:
        height = self.size[0] if height is None else height
        width = self.size[1] if width is None else width
        y, x = np.meshgrid(np.arange(top, top + height, dtype=np.float64),
                           np.arange(left, left + width, dtype=np.float64), indexing="ij")
        img = self.texture(x - self.velocity[0] * t, y - self.velocity[1] * t)
        return torch.from_numpy(img.astype(np.float32))

    def frame(self, t) -> torch.Tensor:
        return self.crop(t)


class SyntheticDataset:
    times = T_GRID
    continuous_time = True

    def __init__(self, n_sequences=64, hr_size=96, seed=0, n_waves=8, max_speed=3.0,
                 freq_range=(0.01, 0.12)):
        if hr_size < 96:
            raise UsageError("synthetic frames must be at least 96 pixels")
        rng = np.random.default_rng(seed)
        self.size = (hr_size, hr_size)
        self.sequences = []
        for i in range(n_sequences):
            mag = rng.uniform(*freq_range, n_waves)
            ang = rng.uniform(0, 2 * np.pi, n_waves)
            freqs = np.stack([mag * np.cos(ang), mag * np.sin(ang)], 1)
            amps = rng.uniform(-1, 1, (n_waves, 3))
            amps *= 0.45 / np.abs(amps).max(1).sum()
            speed = max_speed * np.sqrt(rng.uniform())
            heading = rng.uniform(0, 2 * np.pi)
            vel = speed * np.array([np.cos(heading), np.sin(heading)])
            self.sequences.append(SyntheticSequence(freqs, rng.uniform(0, 2 * np.pi, n_waves), amps,
                                                    vel, self.size, f"synthetic-{seed}-{i}"))

    def __len__(self):
        return len(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    def write(self, root) -> None:
        """Dump every sequence as ``<root>/<seq_id>/frame_k.png`` at the 9 grid times."""
        root = Path(root)
        for i, seq in enumerate(self.sequences):
            d = root / f"{i:04d}"
            d.mkdir(parents=True, exist_ok=True)
            for k, t in enumerate(T_GRID):
                write_image(d / f"frame_{k}.png", seq.frame(t).clamp(0, 1))


class FrameSequence:
    def __init__(self, frames, source):
        self.frames = frames
        self.size = tuple(frames[0].shape[-2:])
        self.times = tuple(np.linspace(0, 1, len(frames)))
        self.source = source

    def index(self, t):
        k = (len(self.frames) - 1) * t
        if abs(k - round(k)) > 1e-9:
            raise UsageError(f"{self.source}: no ground-truth frame at t={t}")
        return int(round(k))

    def crop(self, t, top=0, left=0, height=None, width=None):
        img = self.frames[self.index(t)]
        height = self.size[0] if height is None else height
        width = self.size[1] if width is None else width
        return img[:, top:top + height, left:left + width]

    def frame(self, t):
        return self.frames[self.index(t)]


class DirectoryDataset:
    """``<root>/<seq_id>/frame_0.png ... frame_8.png`` (or 3-frame sequences)."""

    continuous_time = False

    def __init__(self, root):
        root = Path(root)
        if not root.is_dir():
            raise OSError(f"dataset directory {root} does not exist")
        self.sequences = []
        for d in sorted(p for p in root.iterdir() if p.is_dir()):
            files = sorted(d.glob("frame_*.png"), key=lambda p: int(re.findall(r"\d+", p.stem)[-1]))
            if not files:
                continue
            if len(files) not in (3, 9):
                raise OSError(f"{d}: expected 3 or 9 frames, found {len(files)}")
            self.sequences.append(FrameSequence([read_image(f) for f in files], d.name))
        self.times = self.sequences[0].times if self.sequences else ()

    def __len__(self):
        return len(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]


# ------------------------------------------------------------------- batches

@dataclass
class TrainConfig:
    mode: str = "unconstrained"
    batch_size: int = 4
    patch: int = 56
    lr: float = 1e-4
    iterations: int = 2000
    seed: int = 0
    s_min: float = 1.0
    s_max: float = 4.0
    checkpoint_every: int = 500
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.mode not in ("unconstrained", "fixed"):
            raise UsageError(f"unknown training mode {self.mode!r}")
        if self.mode == "fixed":
            self.s_min = self.s_max = 4.0
        if not 1.0 <= self.s_min <= self.s_max:
            raise UsageError("scale range must satisfy 1 <= s_min <= s_max")

    @property
    def t_choices(self):
        return (0.0, 0.5, 1.0) if self.mode == "fixed" else T_GRID

    def check_fits(self, size):
        if round(self.patch * self.s_max) > min(size):
            raise UsageError(f"HR patch {round(self.patch * self.s_max)} does not fit in frames of size {size}")


def draw_query(rng: np.random.Generator, cfg: TrainConfig):
    """The batch-level ``(t, s)``: ``t`` from the time grid, ``s`` uniform in the scale range."""
    return float(rng.choice(cfg.t_choices)), float(rng.uniform(cfg.s_min, cfg.s_max))


def sample_batch(dataset, rng: np.random.Generator, cfg: TrainConfig):
    """Draw one batch sharing a single ``(t, s)``.

    Returns a dict with ``i0``, ``i1`` (``N x 3 x P x P``), ``gt``
    (``N x 3 x hr x hr``), ``t``, the effective ``s = hr / P``, and the
    augmentation record: ``reversed`` and per-item ``(index, top, left, flip_dims)``.
    """
    t, s = draw_query(rng, cfg)
    p = cfg.patch
    hr = round(p * s)
    reverse = bool(rng.integers(2))
    i0s, i1s, gts, crops = [], [], [], []
    for _ in range(cfg.batch_size):
        index = int(rng.integers(len(dataset)))
        seq = dataset[index]
        h, w = seq.size
        top = int(rng.integers(h - hr + 1))
        left = int(rng.integers(w - hr + 1))
        hr0 = seq.crop(0.0, top, left, hr, hr)
        hr1 = seq.crop(1.0, top, left, hr, hr)
        gt = seq.crop(t, top, left, hr, hr)
        lr0 = bicubic_resize(hr0, p, p)
        lr1 = bicubic_resize(hr1, p, p)
        dims = []
        if rng.integers(2):
            dims.append(-1)
        if rng.integers(2):
            dims.append(-2)
        if dims:
            lr0, lr1, gt = (x.flip(dims) for x in (lr0, lr1, gt))
        crops.append((index, top, left, tuple(dims)))
        if reverse:
            lr0, lr1 = lr1, lr0
        i0s.append(lr0)
        i1s.append(lr1)
        gts.append(gt)
    return {
        "i0": torch.stack(i0s), "i1": torch.stack(i1s), "gt": torch.stack(gts),
        "t": 1.0 - t if reverse else t, "s": hr / p,
        "reversed": reverse, "crops": crops,
    }


# ---------------------------------------------------------------------- Adam

def init_adam_state(params):
    return {"step": 0, "m": [torch.zeros_like(p) for p in params], "v": [torch.zeros_like(p) for p in params]}


@torch.no_grad()
def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied in place; returns ``state``."""
    state["step"] += 1
    k = state["step"]
    c1 = 1 - beta1 ** k
    c2 = 1 - beta2 ** k
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            g = torch.zeros_like(p)
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        p.sub_(lr * (m / c1) / ((v / c2).sqrt() + eps))
    return state


def learning_rate(step: int, total: int, cfg: TrainConfig) -> float:
    """Step-wise schedule compressed from epochs onto ``total`` iterations."""
    progress = step / max(total, 1)
    if cfg.mode == "unconstrained":
        # x0.1 once 70% of the run is done (epoch 20 of 30, rounded to the desk default)
        return cfg.lr * (0.1 if progress >= 0.7 else 1.0)
    # fixed mode over 25 epochs: x0.5 at epochs 8 and 16, then x0.2 every 3 epochs
    epoch = progress * 25
    factor = 0.5 ** min(int(epoch // 8), 2)
    if epoch >= 16:
        factor *= 0.2 ** int((epoch - 16) // 3)
    return cfg.lr * factor


# ------------------------------------------------------------------ training

def make_checkpoint(model: USTVSRNet, state, step) -> Checkpoint:
    names = [n for n, _ in model.named_parameters()]
    ckpt = Checkpoint({n: p.detach().clone() for n, p in model.named_parameters()},
                      model.cfg.to_json(), step)
    if state is not None:
        ckpt.exp_avg = {n: m.clone() for n, m in zip(names, state["m"])}
        ckpt.exp_avg_sq = {n: v.clone() for n, v in zip(names, state["v"])}
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint) -> USTVSRNet:
    model = USTVSRNet(NetConfig.from_json(ckpt.config_json))
    missing = set(n for n, _ in model.named_parameters()) - set(ckpt.params)
    if missing:
        raise UsageError(f"checkpoint lacks parameters: {sorted(missing)[:3]}")
    with torch.no_grad():
        for n, p in model.named_parameters():
            p.copy_(ckpt.params[n])
    return model


@dataclass
class TrainResult:
    model: USTVSRNet
    checkpoint: Checkpoint
    losses: list


def train(cfg: TrainConfig, dataset, net_cfg: NetConfig | None = None, resume: Checkpoint | None = None,
          out_dir=None, progress=None) -> TrainResult:
    """Seeded training loop; writes ``step_XXXXXX.ckpt`` and ``loss.csv`` into ``out_dir``."""
    cfg.check_fits(dataset[0].size)
    if resume is not None:
        model = model_from_checkpoint(resume)
        start = resume.step
    else:
        torch.manual_seed(cfg.seed)
        model = USTVSRNet(net_cfg or NetConfig())
        start = 0
    params = list(model.parameters())
    state = init_adam_state(params)
    state["step"] = start
    if resume is not None and resume.exp_avg:
        names = [n for n, _ in model.named_parameters()]
        state["m"] = [resume.exp_avg[n].clone() for n in names]
        state["v"] = [resume.exp_avg_sq[n].clone() for n in names]
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    losses = []
    model.train()
    for step in range(start, cfg.iterations):
        rng = np.random.default_rng([cfg.seed, step])
        batch = sample_batch(dataset, rng, cfg)
        hr = batch["gt"].shape[-1]
        pred = model(batch["i0"], batch["i1"], ScaleTimeQuery(batch["t"], hr, hr))
        loss = total_loss(pred, batch["gt"], cfg.loss)
        if not torch.isfinite(loss):
            if out_dir:
                make_checkpoint(model, state, step).save(out_dir / "last_good.ckpt")
            raise TrainingError(f"non-finite loss at step {step} (t={batch['t']}, s={batch['s']:.3f})")
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        adam_step(params, grads, state, learning_rate(step, cfg.iterations, cfg))
        losses.append((step + 1, loss.item()))
        if progress:
            progress(step + 1, loss.item())
        if out_dir and cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            make_checkpoint(model, state, step + 1).save(out_dir / f"step_{step + 1:06d}.ckpt")
    model.eval()
    ckpt = make_checkpoint(model, state, max(start, cfg.iterations))
    if out_dir:
        ckpt.save(out_dir / "final.ckpt")
        write_loss_csv(out_dir / "loss.csv", losses)
    return TrainResult(model, ckpt, losses)


def write_loss_csv(path, losses) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in losses:
            writer.writerow([step, f"{loss:.8f}"])


def snap_sizes(h: int, w: int, s: float, max_denominator: int = 100):
    """Largest LR size with ``lr * s`` integral in both axes and ``lr * s <= (h, w)``."""
    frac = Fraction(s).limit_denominator(max_denominator)
    q = frac.denominator
    lr_h = math.floor(h / (frac * q)) * q
    lr_w = math.floor(w / (frac * q)) * q
    if lr_h < 1 or lr_w < 1:
        raise UsageError(f"frames of size {h}x{w} are too small for scale {s}")
    return lr_h, lr_w, int(lr_h * frac), int(lr_w * frac)
