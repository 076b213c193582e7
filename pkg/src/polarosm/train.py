"""Circle-loss metric training of the twin-branch model."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .model import DescriptorModel, ScanInput, TileInput, prepare_scan, prepare_tile
from .scan import LabeledScan


class DegenerateDescriptorError(ArithmeticError):
    """A descriptor with zero norm reached the cosine similarity."""


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


@dataclass(frozen=True)
class CircleLossConfig:
    delta_pos: float = 0.2
    delta_neg: float = 1.8
    gamma: float = 10.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def _norms(x: torch.Tensor) -> torch.Tensor:
    n = torch.linalg.vector_norm(x, dim=-1, keepdim=True)
    if (n == 0).any():
        raise DegenerateDescriptorError("zero-norm descriptor in cosine similarity")
    return n


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """<a, b> / (|a| |b|) along the last axis (broadcasting)."""
    return ((a / _norms(a)) * (b / _norms(b))).sum(-1)


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """(n, m) similarities between the rows of ``a`` and ``b``."""
    return (a / _norms(a)) @ (b / _norms(b)).T


def _pos_logit(s_pos, cfg):
    return cfg.gamma * F.relu(1 + cfg.delta_pos - s_pos) * (s_pos - cfg.delta_pos)


def _neg_logit(s_neg, cfg):
    return cfg.gamma * F.relu(s_neg + cfg.delta_neg) * (s_neg - cfg.delta_neg)


def circle_loss(s_pos, s_negs, cfg: CircleLossConfig = CircleLossConfig()) -> torch.Tensor:
    """log(1 + sum_i exp(neg_i) * exp(-pos)), evaluated as softplus(logsumexp - pos).

    The dynamic weights are not detached; the clamp uses relu, whose
    subgradient at the kink is 0.
    """
    s_pos = torch.as_tensor(s_pos, dtype=torch.float64) if not torch.is_tensor(s_pos) else s_pos
    s_negs = torch.as_tensor(s_negs, dtype=s_pos.dtype) if not torch.is_tensor(s_negs) else s_negs
    if s_negs.numel() == 0:
        return torch.zeros((), dtype=s_pos.dtype)
    return F.softplus(torch.logsumexp(_neg_logit(s_negs, cfg), dim=-1) - _pos_logit(s_pos, cfg))


def batch_loss(d_scan: torch.Tensor, d_tile: torch.Tensor, cfg: CircleLossConfig = CircleLossConfig(),
               per_query: bool = False) -> torch.Tensor:
    """Mean circle loss where tile i is the positive of scan i and every other tile a negative."""
    b = d_scan.shape[0]
    if b < 2 or d_tile.shape[0] != b:
        raise ValueError(f"a batch needs at least 2 matched pairs, got {b} scans and {d_tile.shape[0]} tiles")
    sim = cosine_matrix(d_scan, d_tile)
    eye = torch.eye(b, dtype=torch.bool)
    neg = _neg_logit(sim, cfg).masked_fill(eye, -math.inf)
    losses = F.softplus(torch.logsumexp(neg, dim=1) - _pos_logit(sim.diagonal(), cfg))
    return losses if per_query else losses.mean()


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    delta_pos: float = 0.2
    delta_neg: float = 1.8
    gamma: float = 10.0
    augment_rotation: bool = False
    optimizer: str = "sgd"  # or "adam"

    @property
    def loss(self) -> CircleLossConfig:
        return CircleLossConfig(self.delta_pos, self.delta_neg, self.gamma)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 0 or self.lr < 0:
            raise ValueError("epochs and lr must be non-negative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))


_ALIASES = {"Δ_pos": "delta_pos", "Δ_neg": "delta_neg", "γ": "gamma"}


def _coerce(kind, raw: str):
    if kind in (bool, "bool"):
        low = raw.lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ValueError(f"not a boolean: {raw!r}")
        return low in ("1", "true", "yes", "on")
    if kind in (int, "int"):
        return int(raw)
    if kind in (str, "str"):
        return raw
    return float(raw)


def parse_train_config(text: str, base: TrainConfig = TrainConfig()) -> TrainConfig:
    """``key = value`` lines (``:`` also accepted); ``#`` starts a comment."""
    kinds = {f.name: f.type for f in fields(TrainConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":"
        if sep not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split(sep, 1))
        key = _ALIASES.get(key, key)
        if key not in kinds:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            updates[key] = _coerce(kinds[key], raw)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return replace(base, **updates)


def load_train_config(path) -> TrainConfig:
    return parse_train_config(Path(path).read_text())


# -- data ------------------------------------------------------------------------


class PairDataset:
    """Scans paired with their geographically matching tiles."""

    def __init__(self, scans: list[LabeledScan], tiles: list[np.ndarray], model_config, ids=None):
        if len(scans) != len(tiles):
            raise ValueError(f"{len(scans)} scans but {len(tiles)} tiles")
        self.scans = scans
        self.config = model_config
        self.ids = list(ids) if ids is not None else list(range(len(scans)))
        self._tiles = [prepare_tile(t, model_config) for t in tiles]
        self._scans: list[ScanInput | None] = [None] * len(scans)

    def __len__(self):
        return len(self.scans)

    def tile_input(self, i: int) -> TileInput:
        return self._tiles[i]

    def scan_input(self, i: int, angle: float | None = None) -> ScanInput:
        if angle is not None:
            return prepare_scan(self.scans[i].rotated(angle), self.config)
        if self._scans[i] is None:
            self._scans[i] = prepare_scan(self.scans[i], self.config)
        return self._scans[i]


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int, augment: bool):
    """Deterministic shuffled batches of (indices, rotation angles or None)."""
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(n)
    angles = rng.uniform(0.0, 2 * np.pi, n) if augment else None
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if len(idx) < 2:
            break
        yield idx, (angles[start:start + len(idx)] if augment else None)


def cosine_lr(base: float, step: int, total: int) -> float:
    if total <= 0:
        return base
    return 0.5 * base * (1 + math.cos(math.pi * min(step, total) / total))


class Trainer:
    def __init__(self, model: DescriptorModel, dataset: PairDataset, cfg: TrainConfig, dump_dir=None):
        self.model, self.dataset, self.cfg = model, dataset, cfg
        self.dump_dir = Path(dump_dir) if dump_dir else None
        if cfg.optimizer == "adam":
            # scale-free steps; momentum doubles as the first-moment decay
            self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.momentum, 0.999))
        else:
            self.optimizer = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum)
        per_epoch = sum(1 for _ in epoch_batches(len(dataset), cfg.batch_size, 0, 0, False))
        self.total_steps = per_epoch * cfg.epochs
        self.step = 0
        self.trace: list[tuple[int, int, float]] = []

    def batch_descriptors(self, idx, angles):
        ds = self.dataset
        rot = [None] * len(idx) if angles is None else [float(a) for a in angles]
        scans = [ds.scan_input(i, a) for i, a in zip(idx, rot)]
        tiles = [ds.tile_input(i) for i in idx]
        return self.model.describe_scans(scans), self.model.describe_tiles(tiles)

    def evaluate_batch(self, idx, angles=None, train_mode: bool = False) -> float:
        """Batch loss without a step; ``train_mode`` uses batch statistics as a step would."""
        was_training = self.model.training
        self.model.train(train_mode)
        try:
            with torch.no_grad():
                d_scan, d_tile = self.batch_descriptors(idx, angles)
                return float(batch_loss(d_scan, d_tile, self.cfg.loss))
        finally:
            self.model.train(was_training)

    def train_epoch(self, epoch: int) -> list[float]:
        self.model.train()
        losses = []
        for b, (idx, angles) in enumerate(epoch_batches(len(self.dataset), self.cfg.batch_size, self.cfg.seed,
                                                        epoch, self.cfg.augment_rotation)):
            for group in self.optimizer.param_groups:
                group["lr"] = cosine_lr(self.cfg.lr, self.step, self.total_steps)
            self.optimizer.zero_grad(set_to_none=False)
            d_scan, d_tile = self.batch_descriptors(idx, angles)
            loss = batch_loss(d_scan, d_tile, self.cfg.loss)
            if not torch.isfinite(loss):
                self._abort(epoch, b, idx, angles, d_scan, d_tile)
            loss.backward()
            self.optimizer.step()
            self.step += 1
            value = float(loss.detach())
            losses.append(value)
            self.trace.append((epoch, b, value))
        return losses

    def fit(self, log_path=None) -> list[tuple[int, int, float]]:
        for epoch in range(self.cfg.epochs):
            self.train_epoch(epoch)
            if log_path is not None:
                write_loss_trace(log_path, self.trace)
        if log_path is not None:
            write_loss_trace(log_path, self.trace)
        self.model.eval()
        return self.trace

    def _abort(self, epoch, batch, idx, angles, d_scan, d_tile):
        dump = {
            "epoch": epoch,
            "batch": batch,
            "ids": [self.dataset.ids[i] for i in idx],
            "angles": None if angles is None else [float(a) for a in angles],
            "scan_norms": torch.linalg.vector_norm(d_scan, dim=1).tolist(),
            "tile_norms": torch.linalg.vector_norm(d_tile, dim=1).tolist(),
        }
        if self.dump_dir is not None:
            self.dump_dir.mkdir(parents=True, exist_ok=True)
            path = self.dump_dir / f"nonfinite_e{epoch}_b{batch}.txt"
            path.write_text("".join(f"{k} = {v}\n" for k, v in dump.items()))
            dump["path"] = str(path)
        raise NonFiniteLossError(f"non-finite loss at epoch {epoch} batch {batch} (ids {dump['ids']})", dump)


def write_loss_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "batch", "loss"])
        for epoch, batch, loss in trace:
            w.writerow([epoch, batch, repr(loss)])


def read_loss_trace(path) -> list[tuple[int, int, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [(int(r["epoch"]), int(r["batch"]), float(r["loss"])) for r in rows]
