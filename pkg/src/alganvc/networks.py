"""Generator and discriminator architectures.

The generator maps a (mcep_dim, T) feature matrix through two gated input
convolutions, a stride-2 downsampling chain, a stack of dense residual
blocks, a pixel-shuffle upsampling chain mirroring the downsampling one,
and a plain output convolution back to mcep_dim channels.  Width is
preserved end to end, so T must be divisible by 2^n_down.

Each dense residual block is two conv->GLU->norm units.  With I_0 = x and
u_j the first unit's output on I_{j-1}:

    I_j = O_j + u_j + sum_{s<j} I_s + x,      O_j = unit2(u_j)

and the final residual summation I_N feeds the upsampling chain.  The
cumulative sum plus the re-added skip input is the whole point of the
dense wiring; with all block weights zero it collapses to 2^(N-1) * x,
which the tests pin.

The discriminator is a 2-D stack over the (1, mcep_dim, T) map: two gated
input convolutions at stride (1, 1), then width-halving gated+normalized
blocks, then a 1x1 conv to a 1-channel patch score map.  Scores are raw
pre-activation reals; the loss module applies the activation family.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import (
    GatedConv1d,
    GatedConv2d,
    GatedConvNorm1d,
    GatedConvNorm2d,
    UpsampleBlock1d,
    Conv1dLayer,
    Conv2dLayer,
    ConvSpec,
    WEIGHT_INIT_STD,
)
from .tensor import Tensor


@dataclass
class GeneratorConfig:
    mcep_dim: int = 24
    down_channels: tuple = (64, 128, 256, 512, 1024)
    n_dense_residual: int = 8
    residual_channels: int = 1024
    up_channels: tuple = (512, 256, 128, 64)
    kernel_w: int = 5
    down_stride: int = 2
    init_std: float = WEIGHT_INIT_STD

    def __post_init__(self):
        self.down_channels = tuple(int(c) for c in self.down_channels)
        self.up_channels = tuple(int(c) for c in self.up_channels)
        if self.mcep_dim < 1:
            raise ValueError("mcep_dim must be positive")
        if not self.down_channels or any(c < 1 for c in self.down_channels):
            raise ValueError("down_channels must be a nonempty list of positive ints")
        if self.n_dense_residual < 1:
            raise ValueError("need at least one dense residual block")
        if self.residual_channels != self.down_channels[-1]:
            raise ValueError(
                "residual_channels must equal the last downsampling channel count"
            )
        n_up = len(self.resolved_up_channels())
        if n_up != len(self.down_channels):
            raise ValueError(
                f"need {len(self.down_channels)} upsampling blocks to undo "
                f"{len(self.down_channels)} stride-{self.down_stride} downsamples, "
                f"got channel list for {n_up}"
            )
        if self.kernel_w < 1 or self.down_stride < 1:
            raise ValueError("kernel and stride must be positive")

    def resolved_up_channels(self) -> tuple:
        """Upsampling channel targets, one per downsampling block.

        The mirrored channel list is conventionally written one entry short
        (it stops at the first downsample's width); the last entry repeats
        to cover the final upsample.
        """
        up = self.up_channels
        if not up or any(c < 1 for c in up):
            raise ValueError("up_channels must be a nonempty list of positive ints")
        if len(up) == len(self.down_channels) - 1:
            up = up + (up[-1],)
        return up

    @property
    def width_divisor(self) -> int:
        return self.down_stride ** len(self.down_channels)


@dataclass
class DiscriminatorConfig:
    mcep_dim: int = 24
    input_channels: tuple = (24, 64)
    down_channels: tuple = (64, 128, 256, 512, 1024)
    kernel: tuple = (4, 4)
    down_stride: tuple = (1, 2)
    init_std: float = WEIGHT_INIT_STD

    def __post_init__(self):
        self.input_channels = tuple(int(c) for c in self.input_channels)
        self.down_channels = tuple(int(c) for c in self.down_channels)
        self.kernel = tuple(int(k) for k in self.kernel)
        self.down_stride = tuple(int(s) for s in self.down_stride)
        if self.mcep_dim < 1:
            raise ValueError("mcep_dim must be positive")
        if not self.input_channels or not self.down_channels:
            raise ValueError("channel lists must be nonempty")
        if any(c < 1 for c in self.input_channels + self.down_channels):
            raise ValueError("channel counts must be positive")

    @property
    def min_width(self) -> int:
        return self.down_stride[1] ** len(self.down_channels)


class DenseResidualBlock:
    """Two conv->GLU->norm units at constant channel count."""

    def __init__(self, channels: int, kernel: int, rng, std: float, dtype):
        self.unit1 = GatedConvNorm1d(channels, channels, kernel, 1, rng, std, dtype)
        self.unit2 = GatedConvNorm1d(channels, channels, kernel, 1, rng, std, dtype)

    def params(self) -> list:
        return self.unit1.params() + self.unit2.params()


def dense_residual_forward(x: Tensor, blocks) -> Tensor:
    """Fold the dense residual recursion and return the final summation.

    Every I_j re-adds the original skip input x on top of the running sum
    of earlier summations, so the identity path dominates when block
    weights are small.
    """
    sums = []
    current = x
    for blk in blocks:
        u = blk.unit1.forward(current)
        o = blk.unit2.forward(u)
        acc = o + u
        for s in sums:
            acc = acc + s
        acc = acc + x
        sums.append(acc)
        current = acc
    return current


class Generator:
    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        std = cfg.init_std
        k = cfg.kernel_w
        d = cfg.mcep_dim
        down = cfg.down_channels
        up = cfg.resolved_up_channels()
        self.input_convs = [
            GatedConv1d(d, d, k, 1, rng, std, dtype),
            GatedConv1d(d, down[0], k, 1, rng, std, dtype),
        ]
        self.down_blocks = []
        prev = down[0]
        for c in down:
            self.down_blocks.append(
                GatedConvNorm1d(prev, c, k, cfg.down_stride, rng, std, dtype)
            )
            prev = c
        self.residual_blocks = [
            DenseResidualBlock(cfg.residual_channels, k, rng, std, dtype)
            for _ in range(cfg.n_dense_residual)
        ]
        self.up_blocks = []
        for c in up:
            self.up_blocks.append(UpsampleBlock1d(prev, c, k, rng, 2, std, dtype))
            prev = c
        self.out_conv = Conv1dLayer(ConvSpec(prev, d, k, 1), rng, std, dtype)

    def forward(self, x: Tensor) -> Tensor:
        c, t = x.shape
        if c != self.cfg.mcep_dim:
            raise ValueError(f"expected {self.cfg.mcep_dim} feature rows, got {c}")
        div = self.cfg.width_divisor
        if t % div != 0:
            raise ValueError(f"input width {t} not divisible by {div}")
        h = x
        for blk in self.input_convs:
            h = blk.forward(h)
        for blk in self.down_blocks:
            h = blk.forward(h)
        h = dense_residual_forward(h, self.residual_blocks)
        for blk in self.up_blocks:
            h = blk.forward(h)
        return self.out_conv.forward(h)

    def params(self) -> list:
        out = []
        for blk in self.input_convs + self.down_blocks:
            out += blk.params()
        for blk in self.residual_blocks:
            out += blk.params()
        for blk in self.up_blocks:
            out += blk.params()
        return out + self.out_conv.params()

    @property
    def width_divisor(self) -> int:
        return self.cfg.width_divisor

    @property
    def mcep_dim(self) -> int:
        return self.cfg.mcep_dim


class Discriminator:
    def __init__(self, cfg: DiscriminatorConfig, rng: np.random.Generator, dtype=np.float64):
        self.cfg = cfg
        std = cfg.init_std
        k = cfg.kernel
        # input blocks keep full resolution; only the down chain halves width
        self.input_convs = []
        prev = 1
        for c in cfg.input_channels:
            self.input_convs.append(GatedConv2d(prev, c, k, (1, 1), rng, std, dtype))
            prev = c
        self.down_blocks = []
        for c in cfg.down_channels:
            self.down_blocks.append(
                GatedConvNorm2d(prev, c, k, cfg.down_stride, rng, std, dtype)
            )
            prev = c
        self.head = Conv2dLayer(ConvSpec(prev, 1, (1, 1), (1, 1)), rng, std, dtype)

    def forward(self, y: Tensor) -> Tensor:
        c, t = y.shape
        if c != self.cfg.mcep_dim:
            raise ValueError(f"expected {self.cfg.mcep_dim} feature rows, got {c}")
        if t < self.cfg.min_width:
            raise ValueError(
                f"input width {t} too short; need at least {self.cfg.min_width}"
            )
        h = y.reshape(1, c, t)
        for blk in self.input_convs:
            h = blk.forward(h)
        for blk in self.down_blocks:
            h = blk.forward(h)
        return self.head.forward(h)

    def params(self) -> list:
        out = []
        for blk in self.input_convs + self.down_blocks:
            out += blk.params()
        return out + self.head.params()


def build_generator(cfg: GeneratorConfig, seed, dtype=np.float64) -> Generator:
    return Generator(cfg, np.random.default_rng(seed), dtype)


def build_discriminator(cfg: DiscriminatorConfig, seed, dtype=np.float64) -> Discriminator:
    return Discriminator(cfg, np.random.default_rng(seed), dtype)


def desk_generator_config(mcep_dim: int = 24) -> GeneratorConfig:
    """Small configuration that trains in minutes on one CPU core."""
    return GeneratorConfig(
        mcep_dim=mcep_dim,
        down_channels=(16, 32, 64),
        n_dense_residual=2,
        residual_channels=64,
        up_channels=(32, 16),
    )


def desk_discriminator_config(mcep_dim: int = 24) -> DiscriminatorConfig:
    return DiscriminatorConfig(
        mcep_dim=mcep_dim,
        input_channels=(4, 8),
        down_channels=(8, 16),
    )
