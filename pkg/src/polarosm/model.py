"""Twin-branch descriptor model.

Scan branch: point MLP -> max splat -> + LiDAR mask -> encoder -> ARF.
Map branch: class embedding -> bilinear polar warp -> + OSM mask -> encoder -> ARF.
The two encoders are independent; the ARF head is shared so both branches
emit descriptors in one space.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn

from .arf import DESCRIPTOR_DIM, ARFHead
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import C_OEM, C_PEM, EncoderConfig, OsmEmbedding, PointMLP, PolarEncoder
from .osm.raster import TILE_PX, TILE_RESOLUTION
from .polar import PolarGrid, warp_weights
from .scan import LabeledScan, mlp_inputs, range_filter, scan_cells
from .visibility import lidar_visibility_mask, tile_visibility_mask


@dataclass(frozen=True)
class ModelConfig:
    rings: int = 480
    sectors: int = 360
    max_range: float = 50.0
    widths: tuple[int, ...] = (32, 64, 128)
    convs_per_stage: int = 1
    batch_norm: bool = True
    final_relu: bool = False
    c_pem: int = C_PEM
    c_oem: int = C_OEM
    dim: int = DESCRIPTOR_DIM
    tile_px: int = TILE_PX
    tile_resolution: float = TILE_RESOLUTION
    min_range: float = 3.0
    empty_sector_visible: bool = False

    @property
    def grid(self) -> PolarGrid:
        return PolarGrid(self.rings, self.sectors, self.max_range)

    def encoder(self, input_channels: int) -> EncoderConfig:
        return EncoderConfig(input_channels=input_channels, widths=tuple(self.widths),
                             strides=((2, 2),) * len(self.widths), convs_per_stage=self.convs_per_stage,
                             batch_norm=self.batch_norm, final_relu=self.final_relu)

    def to_tensors(self) -> dict[str, np.ndarray]:
        return {f"config/{k}": np.atleast_1d(np.asarray(v, dtype=np.float64)) for k, v in asdict(self).items()}

    @classmethod
    def from_tensors(cls, tensors: dict) -> "ModelConfig":
        kw = {}
        for f in fields(cls):
            key = f"config/{f.name}"
            if key not in tensors:
                continue
            v = np.asarray(tensors[key]).reshape(-1)
            if f.name == "widths":
                kw[f.name] = tuple(int(x) for x in v)
            elif f.type in ("int", int):
                kw[f.name] = int(v[0])
            elif f.type in ("bool", bool):
                kw[f.name] = bool(v[0])
            else:
                kw[f.name] = float(v[0])
        return cls(**kw)


class ScanInput(NamedTuple):
    points: np.ndarray  # (N, 4) MLP rows, sorted by cell
    cells: np.ndarray  # (K,) occupied flat cell indices, ascending
    counts: np.ndarray  # (K,) points per occupied cell
    mask: np.ndarray  # (U, V) uint8


class TileInput(NamedTuple):
    ids: np.ndarray  # (H, W, 3) uint16 class ids
    mask: np.ndarray  # (U, V) uint8


def prepare_scan(scan: LabeledScan, config: ModelConfig) -> ScanInput:
    grid = config.grid
    scan = range_filter(scan, config.min_range, config.max_range)
    cells, valid = scan_cells(scan, grid)
    scan = scan.subset(valid)
    cells = cells[valid]
    mask = lidar_visibility_mask(scan, grid, config.empty_sector_visible)
    order = np.argsort(cells, kind="stable")
    occupied, counts = np.unique(cells[order], return_counts=True)
    return ScanInput(mlp_inputs(scan, grid)[order].astype(np.float32), occupied, counts, mask)


def prepare_tile(values: np.ndarray, config: ModelConfig) -> TileInput:
    values = np.asarray(values)
    if values.shape != (config.tile_px, config.tile_px, 3):
        raise ValueError(f"tile shape {values.shape} does not match the configured {config.tile_px} px")
    return TileInput(values.astype(np.uint16), tile_visibility_mask(values, config.tile_resolution, config.grid))


def class_occupancy(ids: np.ndarray, index: np.ndarray, weight: np.ndarray, n_classes: int) -> np.ndarray:
    """Bilinearly warped one-hot planes of a categorical raster.

    ``ids`` is (H, W) with 0 meaning empty; the result is (n_classes - 1, cells)
    where row j holds the warp of the indicator ``ids == j + 1``. Because the
    warp is linear, embedding-then-warping equals ``table[1:].T @ occupancy``.
    """
    cells = len(index)
    vals = ids.reshape(-1)[index].astype(np.int64)
    hit = vals > 0
    if hit.any() and vals.max() >= n_classes:
        raise ValueError(f"class id {int(vals.max())} out of range (valid 0..{n_classes - 1})")
    slot = (vals[hit] - 1) * cells + np.nonzero(hit)[0]
    occ = np.bincount(slot, weights=weight[hit], minlength=(n_classes - 1) * cells)
    return occ.reshape(n_classes - 1, cells)


class DescriptorModel(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        gen = torch.Generator().manual_seed(seed)
        grid = config.grid
        self.point_mlp = PointMLP(4, config.c_pem, config.c_pem, generator=gen)
        self.scan_encoder = PolarEncoder(config.encoder(config.c_pem + 1), generator=gen)
        self.osm_embed = OsmEmbedding(config.c_oem, generator=gen)
        self.osm_encoder = PolarEncoder(config.encoder(3 * config.c_oem + 1), generator=gen)
        rings, _ = self.scan_encoder.config.output_shape(grid.rings, grid.sectors)
        self.head = ARFHead(rings, config.widths[-1], config.dim, generator=gen)
        self.warp_index, self.warp_weight = warp_weights((config.tile_px, config.tile_px),
                                                         config.tile_resolution, grid)
        self.eval()  # inference by default; the trainer switches to batch statistics

    @property
    def halo(self) -> int:
        return self.scan_encoder.halo

    @property
    def dtype(self) -> torch.dtype:
        return self.head.weight.dtype

    def _wrap(self, x):
        """Append the angular halo: the last h sectors on the left, the first h on the right."""
        h = self.halo
        if not h:
            return x
        if isinstance(x, np.ndarray):
            return np.concatenate([x[..., -h:], x, x[..., :h]], axis=-1)
        return torch.cat([x[..., -h:], x, x[..., :h]], dim=-1)

    def _mask_plane(self, mask: np.ndarray) -> torch.Tensor:
        return torch.as_tensor(self._wrap(mask.astype(np.float32)), dtype=self.dtype)[None]

    # -- per-branch polar inputs, built out of place so backward stays cheap --

    def _scan_input(self, inp: ScanInput) -> torch.Tensor:
        """(C_pem + 1, U, V + 2h) wrapped scan input."""
        grid, h = self.config.grid, self.halo
        c, width = self.config.c_pem, grid.sectors + 2 * h
        feats = self.point_mlp(torch.as_tensor(inp.points, dtype=self.dtype))
        dense = torch.zeros(c, grid.rings * width, dtype=self.dtype)
        if len(inp.cells):
            pooled = torch.segment_reduce(feats, "max", lengths=torch.as_tensor(inp.counts))
            u, v = np.divmod(inp.cells, grid.sectors)
            rows, cols = np.arange(len(v)), v + h
            if h:
                # the last h sectors also land in the left halo, the first h in the right one
                left = np.nonzero(v >= grid.sectors - h)[0]
                right = np.nonzero(v < h)[0]
                rows = np.concatenate([rows, left, right])
                cols = np.concatenate([cols, v[left] + h - grid.sectors, v[right] + h + grid.sectors])
            target = torch.as_tensor(u[rows] * width + cols)
            dense = dense.index_copy(1, target, pooled.T[:, torch.as_tensor(rows)])
        return torch.cat([dense.view(c, grid.rings, width), self._mask_plane(inp.mask)])

    def _tile_input(self, inp: TileInput) -> torch.Tensor:
        """(3 C_oem + 1, U, V + 2h) wrapped tile input."""
        grid = self.config.grid
        planes = []
        for ch, table in enumerate(self.osm_embed.tables):
            occ = class_occupancy(inp.ids[..., ch], self.warp_index, self.warp_weight, table.num_embeddings)
            warped = table.weight[1:].T @ torch.as_tensor(occ, dtype=self.dtype)
            planes.append(warped.view(-1, grid.rings, grid.sectors))
        return torch.cat([self._wrap(torch.cat(planes)), self._mask_plane(inp.mask)])

    def _unwrap(self, x: torch.Tensor) -> torch.Tensor:
        return x[..., self.halo:self.halo + self.config.sectors]

    def scan_feature_map(self, inp: ScanInput) -> torch.Tensor:
        """(C_pem + 1, U, V): splatted point features plus the visibility mask."""
        return self._unwrap(self._scan_input(inp))

    def tile_feature_map(self, inp: TileInput) -> torch.Tensor:
        """(3 C_oem + 1, U, V): bilinearly warped class embeddings plus the mask."""
        return self._unwrap(self._tile_input(inp))

    # -- descriptors -----------------------------------------------------------

    def describe_scans(self, inputs: list[ScanInput]) -> torch.Tensor:
        x = torch.stack([self._scan_input(inp) for inp in inputs])
        return self.head(self.scan_encoder(x, wrapped=True))

    def describe_tiles(self, inputs: list[TileInput]) -> torch.Tensor:
        x = torch.stack([self._tile_input(inp) for inp in inputs])
        return self.head(self.osm_encoder(x, wrapped=True))

    @torch.no_grad()
    def scan_descriptor(self, scan: LabeledScan) -> np.ndarray:
        return self.describe_scans([prepare_scan(scan, self.config)])[0].numpy()

    @torch.no_grad()
    def tile_descriptor(self, values: np.ndarray) -> np.ndarray:
        return self.describe_tiles([prepare_tile(values, self.config)])[0].numpy()

    # -- persistence -------------------------------------------------------------

    def checkpoint_tensors(self) -> dict:
        out = dict(self.config.to_tensors())
        out.update({k: v for k, v in self.state_dict().items()})
        return out

    def save(self, path) -> None:
        save_checkpoint(path, self.checkpoint_tensors())

    @classmethod
    def from_tensors(cls, tensors: dict) -> "DescriptorModel":
        model = cls(ModelConfig.from_tensors(tensors))
        state = {k: torch.from_numpy(np.asarray(v, dtype=np.float32)) for k, v in tensors.items()
                 if not k.startswith("config/")}
        model.load_state_dict(state)
        return model

    @classmethod
    def load(cls, path) -> "DescriptorModel":
        return cls.from_tensors(load_checkpoint(path))
