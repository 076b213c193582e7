"""Point MLP, map class embeddings and the circular-padded polar encoder."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..osm.classes import AREA_CLASSES, NODE_CLASSES, WAY_CLASSES

C_PEM = 64
C_OEM = 16
EMBED_STD = 0.02


def fan_in_uniform_(weight: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """He-style uniform init, bound sqrt(6 / fan_in)."""
    fan_in = weight[0].numel()
    bound = math.sqrt(6.0 / fan_in)
    with torch.no_grad():
        return weight.uniform_(-bound, bound, generator=generator)


def _check_finite(x: torch.Tensor, what: str) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"{what} contains non-finite values")


class PointMLP(nn.Module):
    """Two affine maps with a ReLU between: 4 -> hidden -> out."""

    def __init__(self, in_dim: int = 4, hidden: int = C_PEM, out_dim: int = C_PEM,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)
        for fc in (self.fc1, self.fc2):
            fan_in_uniform_(fc.weight, generator)
            nn.init.zeros_(fc.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_finite(x, "point MLP input")
        return self.fc2(F.relu(self.fc1(x)))


class OsmEmbedding(nn.Module):
    """Per-channel class-id lookup; id 0 (empty) stays a zero vector.

    Input is (..., 3) integer ids for areas/ways/nodes, output (..., 3 * dim)
    with the areas embedding in the first ``dim`` channels.
    """

    def __init__(self, dim: int = C_OEM, generator: torch.Generator | None = None):
        super().__init__()
        self.dim = dim
        self.sizes = (len(AREA_CLASSES) + 1, len(WAY_CLASSES) + 1, len(NODE_CLASSES) + 1)
        self.tables = nn.ModuleList(nn.Embedding(n, dim, padding_idx=0) for n in self.sizes)
        with torch.no_grad():
            for table in self.tables:
                table.weight.normal_(0.0, EMBED_STD, generator=generator)
                table.weight[0].zero_()

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.shape[-1] != 3:
            raise ValueError(f"expected 3 id channels, got shape {tuple(ids.shape)}")
        ids = ids.long()
        for c, n in enumerate(self.sizes):
            plane = ids[..., c]
            if plane.numel() and (plane.min() < 0 or plane.max() >= n):
                raise ValueError(f"class id out of range for channel {c} (valid 0..{n - 1})")
        return torch.cat([F.embedding(ids[..., c], self.frozen_empty(table)) for c, table in enumerate(self.tables)],
                         dim=-1)

    @staticmethod
    def frozen_empty(table: nn.Embedding) -> torch.Tensor:
        """The lookup table with row 0 pinned to zero, never read from the parameter."""
        w = table.weight
        return torch.cat([torch.zeros_like(w[:1]), w[1:]])


@dataclass(frozen=True)
class EncoderConfig:
    input_channels: int = C_PEM + 1
    widths: tuple[int, ...] = (32, 64, 128)
    strides: tuple[tuple[int, int], ...] = field(default=((2, 2), (2, 2), (2, 2)))
    convs_per_stage: int = 1
    kernel_size: int = 3
    batch_norm: bool = False  # per-channel batch statistics after every conv
    final_relu: bool = True  # False leaves the last stage linear (zero-centered under batch_norm)

    def __post_init__(self):
        if len(self.widths) != len(self.strides):
            raise ValueError("one stride per stage is required")
        if self.kernel_size % 2 != 1:
            raise ValueError("kernel size must be odd")
        if self.convs_per_stage < 1:
            raise ValueError("each stage needs at least one convolution")

    @property
    def out_channels(self) -> int:
        return self.widths[-1]

    @property
    def total_stride(self) -> tuple[int, int]:
        return math.prod(s[0] for s in self.strides), math.prod(s[1] for s in self.strides)

    def output_shape(self, rings: int, sectors: int) -> tuple[int, int]:
        sr, sa = self.total_stride
        if rings % sr or sectors % sa:
            raise ValueError(f"strides {self.strides} do not divide the {rings}x{sectors} grid")
        return rings // sr, sectors // sa


class PolarConv(nn.Conv2d):
    """Conv over (ring, sector) maps: zero padding radially, wrap-around angularly."""

    def __init__(self, cin, cout, kernel_size, stride, generator=None):
        super().__init__(cin, cout, kernel_size, stride=stride, padding=(kernel_size // 2, 0))
        fan_in_uniform_(self.weight, generator)
        nn.init.zeros_(self.bias)

    def forward(self, x, wrapped: bool = False):
        """``wrapped`` inputs already carry the angular halo of kernel_size // 2 columns."""
        p = self.kernel_size[1] // 2
        if p and not wrapped:
            x = torch.cat([x[..., -p:], x, x[..., :p]], dim=-1)
        return super().forward(x)


class PolarEncoder(nn.Module):
    """Strided circular-padded conv stack, (B, C_in, U, V) -> (B, C, Z, T)."""

    def __init__(self, config: EncoderConfig = EncoderConfig(), generator: torch.Generator | None = None):
        super().__init__()
        self.config = config
        convs = []
        cin = config.input_channels
        for width, stride in zip(config.widths, config.strides):
            for k in range(config.convs_per_stage):
                convs.append(PolarConv(cin, width, config.kernel_size, stride if k == 0 else 1, generator))
                cin = width
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList([nn.BatchNorm2d(c.out_channels) for c in convs] if config.batch_norm else [])

    @property
    def halo(self) -> int:
        return self.config.kernel_size // 2

    def forward(self, x: torch.Tensor, wrapped: bool = False) -> torch.Tensor:
        """With ``wrapped`` the input is (B, C_in, U, V + 2 * halo), angular halo included."""
        if x.dim() != 4 or x.shape[1] != self.config.input_channels:
            raise ValueError(f"expected (B, {self.config.input_channels}, U, V), got {tuple(x.shape)}")
        self.config.output_shape(x.shape[2], x.shape[3] - (2 * self.halo if wrapped else 0))
        last = len(self.convs) - 1
        for i, conv in enumerate(self.convs):
            x = conv(x, wrapped=wrapped and i == 0)
            if self.norms:
                x = self.norms[i](x)
            if i < last or self.config.final_relu:
                x = F.relu(x)
        return x
