"""The small image-to-image network optimized at inference time.

A lightweight U-Net: three stride-2 downsampling stages with channel widths
16/32/64, three nearest-upsample stages mirrored back, 3x3 convolutions,
instance normalization, additive skip connections, and a sigmoid output so
predictions stay in [0, 1] at the input resolution.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidInputError
from .imaging import ImageTensor

_INIT_LOCK = threading.Lock()


@dataclass(frozen=True)
class StyleNetworkSpec:
    channels: tuple[int, int, int] = (16, 32, 64)

    @property
    def stages(self) -> int:
        return len(self.channels)

    @property
    def stride(self) -> int:
        return 2 ** self.stages


class _DownBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.norm = nn.InstanceNorm2d(cout)

    def forward(self, x):
        return F.relu(self.norm(self.conv(x)))


class _UpBlock(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm = nn.InstanceNorm2d(cout)

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.relu(self.norm(self.conv(x)))


class StyleNetwork(nn.Module):
    def __init__(self, spec: StyleNetworkSpec = StyleNetworkSpec()):
        super().__init__()
        self.spec = spec
        c1, c2, c3 = spec.channels
        self.down1 = _DownBlock(3, c1)
        self.down2 = _DownBlock(c1, c2)
        self.down3 = _DownBlock(c2, c3)
        self.up1 = _UpBlock(c3, c2)
        self.up2 = _UpBlock(c2, c1)
        self.head = nn.Conv2d(c1, 3, 3, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % self.spec.stride or x.shape[-2] % self.spec.stride:
            raise InvalidInputError(
                f"input size {tuple(x.shape[-2:])} not divisible by "
                f"{self.spec.stride}"
            )
        a = self.down1(x)
        b = self.down2(a)
        c = self.down3(b)
        y = self.up1(c) + b
        y = self.up2(y) + a
        y = F.interpolate(y, scale_factor=2, mode="nearest")
        return torch.sigmoid(self.head(y))


def init_style_network(spec: StyleNetworkSpec, seed: int) -> StyleNetwork:
    """Freshly initialized network, deterministic given the seed.

    Seeding goes through the global generator, so the fork/seed/draw sequence
    is locked to stay reproducible when benchmark workers init concurrently.
    """
    with _INIT_LOCK, torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return StyleNetwork(spec)


def run_network(net: StyleNetwork, img: ImageTensor) -> ImageTensor:
    """Apply the network to an (H, W, 3) image, returning the same layout."""
    x = img.permute(2, 0, 1).unsqueeze(0)
    return net(x).squeeze(0).permute(1, 2, 0)
