"""Adaptive radial fusion: polar feature map -> global descriptor.

Functional pieces operate on channel-last tensors with optional leading batch
dimensions; :class:`ARFHead` wraps them around the encoder's (B, C, Z, T)
output.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .nn.layers import EMBED_STD, fan_in_uniform_

DESCRIPTOR_DIM = 2048


def ring_position_encoding(rings: int, channels: int, dtype=torch.float32) -> torch.Tensor:
    """Fixed sinusoidal (rings, channels) table: sin on even columns, cos on odd."""
    if channels % 2:
        raise ValueError(f"ring position encoding needs an even channel count, got {channels}")
    z = torch.arange(rings, dtype=torch.float64)[:, None]
    freq = 10000.0 ** (-torch.arange(0, channels, 2, dtype=torch.float64) / channels)
    enc = torch.empty(rings, channels, dtype=torch.float64)
    enc[:, 0::2] = torch.sin(z * freq)
    enc[:, 1::2] = torch.cos(z * freq)
    return enc.to(dtype)


def angular_average_pool(features: torch.Tensor, encoding: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over the sector axis of a (..., Z, T, C) map, plus the ring encoding.

    The sum is accumulated in float64 so that cyclic shifts along T agree to
    within a rounding of the final cast.
    """
    if features.shape[-2] == 0:
        raise ValueError("cannot pool over zero sectors")
    pooled = features.double().mean(dim=-2).to(features.dtype)
    if encoding is None:
        encoding = ring_position_encoding(features.shape[-3], features.shape[-1], features.dtype)
    return pooled + encoding


def attention_weights(query: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
    """Row-softmax of scaled dot products; every row sums to one."""
    return torch.softmax(query @ keys.transpose(-1, -2) / math.sqrt(query.shape[-1]), dim=-1)


def _attend(query: torch.Tensor, keys: torch.Tensor) -> torch.Tensor:
    return attention_weights(query, keys) @ keys


def proposal_self_attention(proposals: torch.Tensor) -> torch.Tensor:
    """softmax(Q Q^T / sqrt(C)) Q with no projections."""
    return _attend(proposals, proposals)


def radial_cross_attention(proposals: torch.Tensor, radial: torch.Tensor) -> torch.Tensor:
    """softmax(Q' F_r^T / sqrt(C)) F_r."""
    if proposals.shape[-2:] != radial.shape[-2:]:
        raise ValueError(f"proposal shape {tuple(proposals.shape)} does not match radial {tuple(radial.shape)}")
    return _attend(proposals, radial)


def fuse_descriptor(radial: torch.Tensor, attended: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """W . flatten(F_r + F_r'), flattening (Z, C) row-major; ``weight`` is (D, Z*C)."""
    if radial.shape != attended.shape:
        raise ValueError("residual branches differ in shape")
    return (radial + attended).flatten(-2) @ weight.transpose(0, 1)


class ARFHead(nn.Module):
    def __init__(self, rings: int, channels: int, dim: int = DESCRIPTOR_DIM,
                 generator: torch.Generator | None = None):
        super().__init__()
        self.rings, self.channels, self.dim = rings, channels, dim
        self.proposals = nn.Parameter(torch.empty(rings, channels))
        self.weight = nn.Parameter(torch.empty(dim, rings * channels))
        with torch.no_grad():
            self.proposals.normal_(0.0, EMBED_STD, generator=generator)
        fan_in_uniform_(self.weight, generator)
        self.register_buffer("encoding", ring_position_encoding(rings, channels), persistent=False)

    def forward(self, fmap: torch.Tensor) -> torch.Tensor:
        """(B, C, Z, T) encoder output -> (B, dim) descriptors."""
        if fmap.shape[1:3] != (self.channels, self.rings):
            raise ValueError(f"expected (B, {self.channels}, {self.rings}, T), got {tuple(fmap.shape)}")
        radial = angular_average_pool(fmap.permute(0, 2, 3, 1), self.encoding.to(fmap.dtype))
        attended = radial_cross_attention(proposal_self_attention(self.proposals), radial)
        return fuse_descriptor(radial, attended, self.weight)


# -- descriptor files ---------------------------------------------------------

DB_MAGIC = b"OPDB"
DB_VERSION = 1


@dataclass
class DescriptorDatabase:
    descriptors: np.ndarray  # (m, dim) float32
    positions: np.ndarray  # (m, 2) float64 east/north

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32)
        if self.descriptors.ndim == 1 and self.descriptors.size == 0:
            self.descriptors = self.descriptors.reshape(0, DESCRIPTOR_DIM)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if len(self.descriptors) != len(self.positions):
            raise ValueError(f"{len(self.descriptors)} descriptors but {len(self.positions)} positions")

    def to_bytes(self) -> bytes:
        m, dim = self.descriptors.shape
        head = DB_MAGIC + struct.pack("<III", DB_VERSION, m, dim)
        return head + self.descriptors.astype("<f4").tobytes() + self.positions.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DescriptorDatabase":
        if data[:4] != DB_MAGIC or len(data) < 16:
            raise ValueError("not an OPDB descriptor database")
        version, m, dim = struct.unpack_from("<III", data, 4)
        if version != DB_VERSION:
            raise ValueError(f"unsupported OPDB version {version}")
        expected = 16 + 4 * m * dim + 16 * m
        if len(data) != expected:
            raise ValueError(f"OPDB length {len(data)} bytes, expected {expected}")
        desc = np.frombuffer(data, "<f4", m * dim, 16).reshape(m, dim)
        pos = np.frombuffer(data, "<f8", 2 * m, 16 + 4 * m * dim).reshape(m, 2)
        return cls(desc.copy(), pos.copy())

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "DescriptorDatabase":
        return cls.from_bytes(Path(path).read_bytes())


def write_descriptor(path, descriptor) -> None:
    Path(path).write_bytes(np.asarray(descriptor, dtype="<f4").reshape(-1).tobytes())


def read_descriptor(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<f4").copy()
