"""Conditional noise predictors.

The workhorse is a five-level U-Net whose two inputs (the noisy image and
the upsampled-LR condition) pass separate entry convolutions before being
concatenated along channels; the step index enters every residual block as
a per-channel shift derived from a sinusoidal embedding. Analytic oracle
predictors cover the diffusion core's tests without any training.

Checkpoints are one container file: JSON header with the network config,
the full diffusion schedule and the corpus provenance hash, followed by a
flat float32 parameter blob.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .containers import read_checkpoint, write_checkpoint
from .diffusion import DiffusionSchedule


def embed_time(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer diffusion steps, shape (B, dim)."""
    if dim < 2 or dim % 2:
        raise ValueError("embedding dimension must be even and >= 2")
    t = torch.atleast_1d(torch.as_tensor(t, dtype=torch.float64))
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1))
    ang = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1).to(torch.float32)


@dataclass(frozen=True)
class UNetConfig:
    base_channels: int = 8  # paper-scale runs use 32
    channel_mults: tuple[int, ...] = (1, 2, 4, 8, 16)
    blocks_per_level: int = 2
    time_dim: int = 32
    groupnorm_groups: int = 8

    def __post_init__(self):
        if self.base_channels % self.groupnorm_groups:
            raise ValueError("base channels must be divisible by the normalization group count")
        if self.time_dim % 2:
            raise ValueError("time embedding dimension must be even")

    @property
    def levels(self) -> int:
        return len(self.channel_mults)

    @property
    def divisor(self) -> int:
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "channel_mults": list(self.channel_mults),
            "blocks_per_level": self.blocks_per_level,
            "time_dim": self.time_dim,
            "groupnorm_groups": self.groupnorm_groups,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UNetConfig":
        return cls(
            base_channels=d["base_channels"],
            channel_mults=tuple(d["channel_mults"]),
            blocks_per_level=d["blocks_per_level"],
            time_dim=d["time_dim"],
            groupnorm_groups=d["groupnorm_groups"],
        )


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, time_dim: int, groups: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(groups, in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, out_ch)
        self.norm2 = nn.GroupNorm(min(groups, out_ch), out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(t_emb)[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class ConditionalUNet(nn.Module):
    """Noise predictor eps(x_t, y, t) with separate entries for x_t and y."""

    def __init__(self, cfg: UNetConfig = UNetConfig()):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.entry_x = nn.Conv2d(1, c, 3, padding=1)
        self.entry_y = nn.Conv2d(1, c, 3, padding=1)
        self.time_mlp = nn.Sequential(
            nn.Linear(cfg.time_dim, cfg.time_dim * 4),
            nn.SiLU(),
            nn.Linear(cfg.time_dim * 4, cfg.time_dim),
        )

        chans = [c * m for m in cfg.channel_mults]
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        in_ch = 2 * c
        for lvl, out_ch in enumerate(chans):
            blocks = nn.ModuleList()
            for b in range(cfg.blocks_per_level):
                blocks.append(ResBlock(in_ch if b == 0 else out_ch, out_ch, cfg.time_dim, cfg.groupnorm_groups))
            self.down_blocks.append(blocks)
            self.downsamples.append(
                nn.Conv2d(out_ch, out_ch, 3, stride=2, padding=1) if lvl < cfg.levels - 1 else nn.Identity()
            )
            in_ch = out_ch

        self.up_blocks = nn.ModuleList()
        self.upsamples = nn.ModuleList()
        for lvl in range(cfg.levels - 2, -1, -1):
            skip_ch = chans[lvl]
            self.upsamples.append(nn.Conv2d(in_ch, chans[lvl], 3, padding=1))
            blocks = nn.ModuleList()
            for b in range(cfg.blocks_per_level):
                blocks.append(
                    ResBlock(
                        chans[lvl] + skip_ch if b == 0 else chans[lvl],
                        chans[lvl],
                        cfg.time_dim,
                        cfg.groupnorm_groups,
                    )
                )
            self.up_blocks.append(blocks)
            in_ch = chans[lvl]

        self.out_norm = nn.GroupNorm(min(cfg.groupnorm_groups, c), c)
        self.out_conv = nn.Conv2d(c, 1, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x_t: torch.Tensor, y: torch.Tensor, t) -> torch.Tensor:
        squeeze = x_t.ndim == 2
        if squeeze:
            x_t, y = x_t[None, None], y[None, None]
        elif x_t.ndim == 3:
            x_t, y = x_t[:, None], y[:, None]
            squeeze = "batch"
        if x_t.shape[-1] % self.cfg.divisor or x_t.shape[-2] % self.cfg.divisor:
            raise ValueError(
                f"spatial size {tuple(x_t.shape[-2:])} not divisible by {self.cfg.divisor}"
            )
        t = torch.as_tensor(t)
        if t.ndim == 0:
            t = t.repeat(x_t.shape[0])
        t_emb = self.time_mlp(embed_time(t, self.cfg.time_dim).to(x_t.dtype))

        h = torch.cat([self.entry_x(x_t), self.entry_y(y)], dim=1)
        skips = []
        for blocks, down in zip(self.down_blocks, self.downsamples):
            for block in blocks:
                h = block(h, t_emb)
            skips.append(h)
            h = down(h)
        skips.pop()  # bottom level output is h itself
        for up, blocks in zip(self.upsamples, self.up_blocks):
            h = up(torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest"))
            h = torch.cat([h, skips.pop()], dim=1)
            for block in blocks:
                h = block(h, t_emb)
        out = self.out_conv(torch.nn.functional.silu(self.out_norm(h)))
        if squeeze is True:
            return out[0, 0]
        if squeeze == "batch":
            return out[:, 0]
        return out

    def param_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def flat_params(self) -> tuple[np.ndarray, list]:
        """Deterministically ordered float32 blob plus its layout."""
        sd = self.state_dict()
        layout, chunks = [], []
        for key in sorted(sd.keys()):
            layout.append([key, list(sd[key].shape)])
            chunks.append(sd[key].detach().cpu().numpy().astype(np.float32).ravel())
        return np.concatenate(chunks), layout

    def load_flat_params(self, blob: np.ndarray, layout: list) -> None:
        expected = sum(int(np.prod(shape)) for _, shape in layout)
        if expected != blob.size:
            raise ValueError(f"parameter blob holds {blob.size} values, layout expects {expected}")
        state = {}
        pos = 0
        for key, shape in layout:
            n = int(np.prod(shape))
            state[key] = torch.from_numpy(blob[pos : pos + n].reshape(shape).copy())
            pos += n
        self.load_state_dict(state)


class OracleDeltaPredictor:
    """Exact noise predictor for data concentrated at one constant image.

    Inverts the forward shortcut for x0 == c, so feeding it a properly
    noised sample returns the very noise that was injected.
    """

    def __init__(self, c: float, schedule: DiffusionSchedule):
        if abs(c) > 1.0:
            raise ValueError("target constant must lie in [-1, 1] (model space)")
        self.c = float(c)
        self.schedule = schedule

    def __call__(self, x_t: torch.Tensor, y: torch.Tensor, t) -> torch.Tensor:
        tt = torch.as_tensor(t)
        if tt.ndim == 0:
            g = float(self.schedule.gamma[int(tt)])
            return (x_t - math.sqrt(g) * self.c) / math.sqrt(1.0 - g)
        g = torch.as_tensor(self.schedule.gamma, dtype=x_t.dtype)[tt]
        g = g.reshape(-1, *([1] * (x_t.ndim - 1)))
        return (x_t - torch.sqrt(g) * self.c) / torch.sqrt(1.0 - g)

    def param_count(self) -> int:
        return 0


class FixedEpsPredictor:
    """Returns a preset tensor; test double for loss identities."""

    def __init__(self, eps: torch.Tensor):
        self.eps = eps

    def __call__(self, x_t, y, t):
        return self.eps

    def param_count(self) -> int:
        return 0


class ZeroPredictor:
    def __call__(self, x_t, y, t):
        return torch.zeros_like(x_t)

    def param_count(self) -> int:
        return 0


@dataclass
class Checkpoint:
    """Everything needed to reproduce sampling: net, schedule, provenance."""

    config: UNetConfig
    schedule: DiffusionSchedule
    corpus_hash: str
    window_hu: tuple[float, float]
    blob: np.ndarray
    layout: list
    train_meta: dict = field(default_factory=dict)

    def build_model(self) -> ConditionalUNet:
        model = ConditionalUNet(self.config)
        model.load_flat_params(self.blob, self.layout)
        model.eval()
        return model


def save_checkpoint(path: str | Path, model: ConditionalUNet, schedule: DiffusionSchedule,
                    corpus_hash: str, window_hu: tuple[float, float], train_meta: dict | None = None) -> None:
    blob, layout = model.flat_params()
    header = {
        "kind": "ctsr_checkpoint",
        "unet": model.cfg.to_dict(),
        "schedule": schedule.to_dict(),
        "corpus_hash": corpus_hash,
        "window_hu": list(window_hu),
        "param_layout": layout,
        "train_meta": train_meta or {},
    }
    write_checkpoint(path, header, blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, blob = read_checkpoint(path)
    if header.get("kind") != "ctsr_checkpoint":
        raise ValueError(f"{path}: not a model checkpoint")
    return Checkpoint(
        config=UNetConfig.from_dict(header["unet"]),
        schedule=DiffusionSchedule.from_dict(header["schedule"]),
        corpus_hash=header["corpus_hash"],
        window_hu=tuple(header["window_hu"]),
        blob=blob,
        layout=header["param_layout"],
        train_meta=header.get("train_meta", {}),
    )
