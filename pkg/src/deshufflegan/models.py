"""DCGAN-style generator and dual-head discriminator.

Layer table (``b`` = base_width, ``s0`` = base spatial size, ``m`` = number
of 2x resampling stages, ``out_size == s0 * 2**m``):

generator
    Linear(z_dim -> 8b * s0 * s0, no bias), BatchNorm2d(8b), ReLU
    m - 1 times: ConvTranspose2d(c -> c/2, k4 s2 p1, no bias), BatchNorm2d, ReLU
    ConvTranspose2d(c -> 3, k4 s2 p1, bias), tanh

discriminator trunk
    Conv2d(3 -> b, k4 s2 p1, bias), LeakyReLU(0.2)
    m - 1 times: Conv2d(c -> 2c, k4 s2 p1, no bias), BatchNorm2d, LeakyReLU(0.2)
heads (on the s0 x s0 trunk output with T = b * 2**(m-1) channels)
    rf:   Conv2d(T -> 1, k=s0, valid, bias)
    perm: Conv2d(T -> K, k=s0, valid, bias)

``s0`` is found by halving the image size while it stays even and the half
is at least 3, so 128 -> 4 and 48 -> 3.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import torch
import torch.nn as nn

MIN_BASE_SPATIAL = 3
MAX_BASE_SPATIAL = 7


def resampling_plan(size: int) -> tuple[int, int]:
    """Return ``(s0, m)`` with ``size == s0 * 2**m``."""
    s0, m = size, 0
    while s0 % 2 == 0 and s0 // 2 >= MIN_BASE_SPATIAL:
        s0 //= 2
        m += 1
    if m < 2 or s0 > MAX_BASE_SPATIAL:
        raise ValueError(
            f"image size {size} must be s0 * 2**m with {MIN_BASE_SPATIAL} <= s0 <= "
            f"{MAX_BASE_SPATIAL} and m >= 2 (e.g. 32, 48, 64, 128)"
        )
    return s0, m


@dataclass(frozen=True)
class GeneratorSpec:
    z_dim: int = 128
    out_channels: int = 3
    out_size: int = 128
    base_width: int = 64


@dataclass(frozen=True)
class DiscriminatorSpec:
    in_channels: int = 3
    in_size: int = 128
    base_width: int = 64
    k_perm: int = 30


class DiscriminatorOutputs(NamedTuple):
    rf_score: torch.Tensor
    perm_logits: torch.Tensor


class Generator(nn.Module):
    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        if spec.z_dim < 1 or spec.out_channels < 1 or spec.base_width < 1:
            raise ValueError(f"invalid generator spec {spec}")
        s0, m = resampling_plan(spec.out_size)
        ch = 8 * spec.base_width
        if ch % 2 ** (m - 1):
            raise ValueError(f"8 * base_width = {ch} cannot be halved {m - 1} times")
        self.spec = spec
        self.base_spatial = s0
        self.start_channels = ch

        self.project = nn.Linear(spec.z_dim, ch * s0 * s0, bias=False)
        self.project_norm = nn.BatchNorm2d(ch)
        layers: list[nn.Module] = []
        for _ in range(m - 1):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 4, 2, 1, bias=False),
                nn.BatchNorm2d(ch // 2),
                nn.ReLU(inplace=True),
            ]
            ch //= 2
        layers += [nn.ConvTranspose2d(ch, spec.out_channels, 4, 2, 1), nn.Tanh()]
        self.body = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.project(z).view(z.shape[0], self.start_channels, self.base_spatial, self.base_spatial)
        h = torch.relu(self.project_norm(h))
        return self.body(h)


class Discriminator(nn.Module):
    """Shared convolutional trunk with a real/fake head and a permutation head."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        if spec.in_channels < 1 or spec.base_width < 1 or spec.k_perm < 2:
            raise ValueError(f"invalid discriminator spec {spec}")
        s0, m = resampling_plan(spec.in_size)
        self.spec = spec
        ch = spec.base_width
        layers: list[nn.Module] = [nn.Conv2d(spec.in_channels, ch, 4, 2, 1), nn.LeakyReLU(0.2, inplace=True)]
        for _ in range(m - 1):
            layers += [
                nn.Conv2d(ch, ch * 2, 4, 2, 1, bias=False),
                nn.BatchNorm2d(ch * 2),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            ch *= 2
        self.trunk = nn.Sequential(*layers)
        self.trunk_channels = ch
        self.rf_head = nn.Conv2d(ch, 1, s0)
        self.perm_head = nn.Conv2d(ch, spec.k_perm, s0)

    def forward(self, x: torch.Tensor) -> DiscriminatorOutputs:
        h = self.trunk(x)
        rf = self.rf_head(h).flatten(1).squeeze(1)
        perm = self.perm_head(h).mean(dim=(2, 3))
        return DiscriminatorOutputs(rf, perm)


def init_weights(module: nn.Module, generator: torch.Generator) -> None:
    """DCGAN initialization: N(0, 0.02) weights, N(1, 0.02) norm scales, zero biases.

    Modules are visited in registration order, so adding a head after the
    trunk never changes how the trunk is initialized.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, 0.02, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.normal_(m.weight, 1.0, 0.02, generator=generator)
            nn.init.zeros_(m.bias)


def build_generator(spec: GeneratorSpec, seed: int | None = None) -> Generator:
    net = Generator(spec)
    if seed is not None:
        init_weights(net, torch.Generator().manual_seed(seed))
    return net


def build_discriminator(spec: DiscriminatorSpec, seed: int | None = None) -> Discriminator:
    net = Discriminator(spec)
    if seed is not None:
        init_weights(net, torch.Generator().manual_seed(seed))
    return net


def count_parameters(network: nn.Module) -> int:
    return sum(p.numel() for p in network.parameters() if p.requires_grad)
