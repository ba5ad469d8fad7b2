"""Generator, critic and encoder networks plus latent sampling.

DCGAN-family stacks sized by a width multiplier. The critic is norm-free so
that no computation couples batch elements (the per-sample gradient penalty
requires it); the encoder may share the critic's convolutional trunk and add
its own head, or own a private trunk.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


@dataclass
class LatentSample:
    """Paired generator inputs: incompressible noise z and controllable code c."""

    z: torch.Tensor  # (B, d), standard Gaussian
    c: torch.Tensor  # (B, k), Uniform(-1, 1) per dim

    @property
    def batch(self) -> int:
        return self.z.shape[0]


def sample_latent(
    batch: int,
    d: int,
    k: int,
    seed: int | torch.Generator,
    dtype: torch.dtype = torch.float32,
) -> LatentSample:
    """Draw z ~ N(0, I_d) and c ~ U(-1, 1)^k; deterministic under the seed."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    gen = seed if isinstance(seed, torch.Generator) else torch.Generator().manual_seed(seed)
    z = torch.randn(batch, d, generator=gen, dtype=dtype)
    c = torch.rand(batch, k, generator=gen, dtype=dtype) * 2.0 - 1.0
    return LatentSample(z=z, c=c)


def _num_blocks(side: int) -> int:
    blocks = 0
    s = side
    while s > 4:
        if s % 2 != 0:
            raise ValueError(f"image side must be 4 * 2**m, got {side}")
        s //= 2
        blocks += 1
    if s != 4:
        raise ValueError(f"image side must be 4 * 2**m, got {side}")
    return blocks


@dataclass(frozen=True)
class GeneratorSpec:
    side: int
    channels: int = 1
    width: int = 32
    d: int = 60
    k: int = 5
    seed: int = 0


@dataclass(frozen=True)
class DiscriminatorSpec:
    side: int
    channels: int = 1
    width: int = 32
    seed: int = 0


@dataclass(frozen=True)
class EncoderSpec:
    side: int
    channels: int = 1
    width: int = 32
    k: int = 5
    hidden: int = 64
    seed: int = 0
    share_trunk: bool = True


class Generator(nn.Module):
    """(z, c) -> image in [-1, 1]^(C, n, n); project-and-reshape plus
    fractionally-strided conv blocks."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        blocks = _num_blocks(spec.side)
        ch = spec.width * (2 ** max(blocks - 1, 0))
        self.start_channels = ch
        self.fc = nn.Linear(spec.d + spec.k, ch * 4 * 4)
        layers: list[nn.Module] = [nn.BatchNorm2d(ch), nn.ReLU(True)]
        for _ in range(blocks - 1):
            layers += [
                nn.ConvTranspose2d(ch, ch // 2, 4, stride=2, padding=1),
                nn.BatchNorm2d(ch // 2),
                nn.ReLU(True),
            ]
            ch //= 2
        layers += [nn.ConvTranspose2d(ch, spec.channels, 4, stride=2, padding=1)]
        if blocks == 0:
            # side == 4: single conv keeps spatial size
            layers = [nn.Conv2d(self.start_channels, spec.channels, 3, padding=1)]
        self.deconv = nn.Sequential(*layers)
        self.out = nn.Tanh()

    def forward(self, z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        h = self.fc(torch.cat([z, c], dim=1))
        h = h.view(-1, self.start_channels, 4, 4)
        return self.out(self.deconv(h))


class Critic(nn.Module):
    """Image -> unbounded scalar score. Norm-free: per-sample pure."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        blocks = _num_blocks(spec.side)
        layers: list[nn.Module] = []
        in_ch = spec.channels
        ch = spec.width
        for _ in range(max(blocks, 1)):
            layers += [nn.Conv2d(in_ch, ch, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
            in_ch = ch
            ch *= 2
        self.trunk = nn.Sequential(*layers)
        final_side = spec.side // (2 ** max(blocks, 1))
        self.feature_dim = in_ch * final_side * final_side
        self.head = nn.Linear(self.feature_dim, 1)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.trunk(x).flatten(1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x)).squeeze(-1)


class Encoder(nn.Module):
    """Image -> k-dim mean of a unit-variance Gaussian over the code.

    With ``share_trunk`` the convolutional features come from a critic owned
    elsewhere; only the head counts as this module's own parameters then.
    """

    def __init__(self, spec: EncoderSpec, trunk: Critic | None = None):
        super().__init__()
        self.spec = spec
        self.shares_trunk = trunk is not None
        if trunk is None:
            trunk = Critic(DiscriminatorSpec(spec.side, spec.channels, spec.width, spec.seed))
        self.trunk = trunk
        self.head = nn.Sequential(
            nn.Linear(trunk.feature_dim, spec.hidden),
            nn.LeakyReLU(0.2, True),
            nn.Linear(spec.hidden, spec.k),
        )

    def own_parameters(self):
        """Parameters updated on the generator side (head only when shared)."""
        return self.head.parameters() if self.shares_trunk else self.parameters()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.trunk.features(x))


def _seeded(builder, seed: int):
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return builder()


def build_generator(spec: GeneratorSpec) -> Generator:
    return _seeded(lambda: Generator(spec), spec.seed)


def build_critic(spec: DiscriminatorSpec) -> Critic:
    return _seeded(lambda: Critic(spec), spec.seed)


def build_encoder(spec: EncoderSpec, trunk: Critic | None = None) -> Encoder:
    return _seeded(lambda: Encoder(spec, trunk), spec.seed)


def generate(g: Generator, s: LatentSample) -> torch.Tensor:
    """Forward the generator on a latent sample with dimension checks."""
    if s.z.shape[1] != g.spec.d or s.c.shape[1] != g.spec.k:
        raise ValueError(
            f"latent dims (d={s.z.shape[1]}, k={s.c.shape[1]}) do not match generator "
            f"spec (d={g.spec.d}, k={g.spec.k})"
        )
    return g(s.z, s.c)


def discriminate(d: Critic, x: torch.Tensor) -> torch.Tensor:
    if x.ndim != 4 or x.shape[1] != d.spec.channels or x.shape[2:] != (d.spec.side, d.spec.side):
        raise ValueError(
            f"expected (B, {d.spec.channels}, {d.spec.side}, {d.spec.side}) images, "
            f"got {tuple(x.shape)}"
        )
    return d(x)


def encode(q: Encoder, x: torch.Tensor) -> torch.Tensor:
    if x.ndim != 4 or x.shape[2:] != (q.spec.side, q.spec.side):
        raise ValueError(f"expected (B, C, {q.spec.side}, {q.spec.side}) images, got {tuple(x.shape)}")
    return q(x)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
