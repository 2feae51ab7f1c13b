"""Encoder-decoder generator and convolutional discriminator, ResNet or plain variants."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

RESNET = "RESNET"
PLAIN_CONV = "PLAIN_CONV"
SIGMOID = "SIGMOID"
LINEAR = "LINEAR"


@dataclass
class ArchSpec:
    variant: str = RESNET
    size: int = 64
    width: int = 32
    disc_width: int | None = None
    blocks: int = 2
    stages: int = 2
    disc_stages: int = 3
    head: str = SIGMOID
    zero_init_final: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.variant not in (RESNET, PLAIN_CONV):
            raise ValueError(f"unknown variant {self.variant!r}; valid: RESNET, PLAIN_CONV")
        if self.head not in (SIGMOID, LINEAR):
            raise ValueError(f"unknown head {self.head!r}; valid: SIGMOID, LINEAR")
        if self.width < 1 or self.blocks < 1 or self.stages < 1 or self.disc_stages < 1:
            raise ValueError("width, blocks and stage counts must be positive")
        for stages in (self.stages, self.disc_stages):
            if self.size % (2**stages) != 0:
                raise ValueError(
                    f"input size {self.size} is not divisible by 2^{stages}; "
                    "use a power-of-two size or fewer stages"
                )

    def to_dict(self) -> dict:
        return asdict(self)


class ResBlock(nn.Module):
    def __init__(self, ch: int, norm: bool, act):
        super().__init__()
        layers = [nn.Conv2d(ch, ch, 3, padding=1)]
        if norm:
            layers.append(_inorm(ch))
        layers += [act(), nn.Conv2d(ch, ch, 3, padding=1)]
        if norm:
            layers.append(_inorm(ch))
        self.body = nn.Sequential(*layers)
        self.act = act()

    def forward(self, x):
        return self.act(x + self.body(x))


def _inorm(ch: int) -> nn.Module:
    # per-channel, per-sample normalization; GroupNorm with one channel per group
    # is the same map as an affine InstanceNorm2d and much faster on CPU
    return nn.GroupNorm(ch, ch)


def _conv_unit(cin, cout, stride, norm, act):
    layers = [nn.Conv2d(cin, cout, 3, stride=stride, padding=1)]
    if norm:
        layers.append(_inorm(cout))
    layers.append(act())
    return layers


def _stage_blocks(ch, spec: ArchSpec, norm, act):
    if spec.variant == RESNET:
        return [ResBlock(ch, norm, act) for _ in range(spec.blocks)]
    out = []
    for _ in range(spec.blocks):
        out += _conv_unit(ch, ch, 1, norm, act)
    return out


class Generator(nn.Module):
    """Image -> image denoiser with a sigmoid output.

    Encoder: stem conv, then per stage a stride-2 conv doubling channels and
    ``blocks`` residual (or plain) units. The decoder mirrors it with 2x2
    transposed convs; the full-resolution stage carries no blocks to keep the
    cost down.
    """

    def __init__(self, spec: ArchSpec):
        super().__init__()
        w = spec.width
        act = nn.ReLU
        layers = _conv_unit(1, w, 1, True, act)
        ch = w
        for _ in range(spec.stages):
            layers += _conv_unit(ch, 2 * ch, 2, True, act)
            ch *= 2
            layers += _stage_blocks(ch, spec, True, act)
        for stage in reversed(range(spec.stages)):
            layers += [nn.ConvTranspose2d(ch, ch // 2, 2, stride=2),
                       _inorm(ch // 2), act()]
            ch //= 2
            if stage > 0:
                layers += _stage_blocks(ch, spec, True, act)
        self.body = nn.Sequential(*layers)
        self.final = nn.Conv2d(ch, 1, 3, padding=1)
        if spec.zero_init_final:
            nn.init.zeros_(self.final.weight)
            nn.init.zeros_(self.final.bias)

    def forward(self, y):
        squeeze = y.dim() == 3
        if squeeze:
            y = y.unsqueeze(1)
        out = torch.sigmoid(self.final(self.body(y)))
        return out.squeeze(1) if squeeze else out


class Discriminator(nn.Module):
    """Strided-conv classifier without normalization layers; sigmoid or linear head.

    ``disc_stages`` stride-2 convs (the stem is the first); every conv after the
    stem is followed by a residual block. Global average pooling and a linear
    unit finish the network.
    """

    def __init__(self, spec: ArchSpec):
        super().__init__()
        w = spec.disc_width or spec.width
        act = lambda: nn.LeakyReLU(0.2)  # noqa: E731
        layers = _conv_unit(1, w, 2, False, act)
        ch = w
        for _ in range(spec.disc_stages - 1):
            layers += _conv_unit(ch, 2 * ch, 2, False, act)
            ch *= 2
            if spec.variant == RESNET:
                layers.append(ResBlock(ch, False, act))
            else:
                layers += _conv_unit(ch, ch, 1, False, act)
        self.body = nn.Sequential(*layers)
        self.fc = nn.Linear(ch, 1)
        self.sigmoid = spec.head == SIGMOID

    def forward(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(1)
        h = self.body(x).mean(dim=(2, 3))
        out = self.fc(h).squeeze(1)
        return torch.sigmoid(out) if self.sigmoid else out


def _seeded(spec: ArchSpec, offset: int, cls):
    spec.validate()
    state = torch.random.get_rng_state()
    torch.manual_seed(spec.seed * 2 + offset)
    try:
        net = cls(spec)
    finally:
        torch.random.set_rng_state(state)
    return net


def build_generator(spec: ArchSpec) -> Generator:
    return _seeded(spec, 0, Generator)


def build_discriminator(spec: ArchSpec) -> Discriminator:
    return _seeded(spec, 1, Discriminator)


def count_parameters(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())
