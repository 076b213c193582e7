"""Exhaustive cosine-similarity retrieval and Recall@K metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
import torch

from .arf import DescriptorDatabase
from .model import DescriptorModel, prepare_tile


class IndexBuildError(RuntimeError):
    pass


class QueryError(ValueError):
    pass


@dataclass
class DescriptorIndex:
    descriptors: np.ndarray  # (m, dim) float32
    positions: np.ndarray  # (m, 2) east/north meters
    ids: np.ndarray  # (m,) int64 tile ids

    def __post_init__(self):
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 2)
        if self.descriptors.ndim != 2:
            self.descriptors = self.descriptors.reshape(len(self.positions), -1)
        self.ids = (np.arange(len(self.positions), dtype=np.int64) if self.ids is None
                    else np.asarray(self.ids, dtype=np.int64))
        if not (len(self.descriptors) == len(self.positions) == len(self.ids)):
            raise ValueError("descriptor, position and id counts differ")
        if len(self.descriptors) and not np.isfinite(self.descriptors).all():
            raise ValueError("index descriptors must be finite")

    def __len__(self):
        return len(self.ids)

    def to_database(self) -> DescriptorDatabase:
        return DescriptorDatabase(self.descriptors, self.positions)

    @classmethod
    def from_database(cls, db: DescriptorDatabase) -> "DescriptorIndex":
        return cls(db.descriptors, db.positions, None)

    def save(self, path) -> None:
        self.to_database().save(path)

    @classmethod
    def load(cls, path) -> "DescriptorIndex":
        return cls.from_database(DescriptorDatabase.load(path))


@dataclass
class RetrievalResult:
    query_id: int
    tile_ids: np.ndarray  # ranked
    similarities: np.ndarray  # non-increasing
    position: np.ndarray  # ground-truth east/north of the query
    tile_positions: np.ndarray  # (n, 2) positions of the ranked tiles


def build_index(tiles, model: DescriptorModel, positions, ids=None, batch_size: int = 32) -> DescriptorIndex:
    """Encode every tile through the map branch, preserving order."""
    tiles = list(tiles)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    ids = np.arange(len(tiles)) if ids is None else np.asarray(ids)
    if len(positions) != len(tiles):
        raise ValueError(f"{len(tiles)} tiles but {len(positions)} positions")
    rows = []
    model.eval()
    with torch.no_grad():
        for start in range(0, len(tiles), batch_size):
            chunk = range(start, min(start + batch_size, len(tiles)))
            inputs = []
            for i in chunk:
                try:
                    inputs.append(prepare_tile(tiles[i], model.config))
                except Exception as exc:
                    raise IndexBuildError(f"tile {ids[i]}: {exc}") from exc
            desc = model.describe_tiles(inputs).numpy()
            bad = ~np.isfinite(desc).all(axis=1)
            if bad.any():
                raise IndexBuildError(f"tile {ids[chunk[int(np.argmax(bad))]]}: non-finite descriptor")
            rows.append(desc)
    desc = np.concatenate(rows) if rows else np.zeros((0, model.config.dim), np.float32)
    return DescriptorIndex(desc, positions, ids)


def similarities(index: DescriptorIndex, query: np.ndarray) -> np.ndarray:
    db = index.descriptors.astype(np.float64)
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    norms = np.linalg.norm(db, axis=1) * np.linalg.norm(q)
    if (norms == 0).any():
        raise QueryError("zero-norm descriptor in the index or query")
    return db @ q / norms


def rank(sims: np.ndarray, ids: np.ndarray) -> np.ndarray:
    """Order by similarity descending, ties by ascending id."""
    return np.lexsort((ids, -sims))


def query_topk(index: DescriptorIndex, query, n: int, query_id: int = -1, position=None) -> RetrievalResult:
    if len(index) == 0:
        raise QueryError("query against an empty index")
    if not 1 <= n <= len(index):
        raise QueryError(f"top-{n} requested from an index of {len(index)}")
    sims = similarities(index, query)
    order = rank(sims, index.ids)[:n]
    pos = np.full(2, np.nan) if position is None else np.asarray(position, dtype=np.float64)
    return RetrievalResult(query_id, index.ids[order], sims[order], pos, index.positions[order])


def _hits(result: RetrievalResult, k: float) -> np.ndarray:
    if not np.isfinite(result.position).all():
        raise ValueError(f"query {result.query_id} has no ground-truth position")
    return np.linalg.norm(result.tile_positions - result.position, axis=1) <= k


def first_hit_rank(result: RetrievalResult, k: float) -> int | None:
    """1-based rank of the first retrieved tile within ``k`` meters, if any."""
    hits = np.nonzero(_hits(result, k))[0]
    return int(hits[0]) + 1 if len(hits) else None


def recall_at(results, k: float, n: int = 1) -> float:
    """Fraction of queries with a tile within ``k`` meters (inclusive) among the top ``n``."""
    results = list(results)
    if not results:
        raise ValueError("recall over an empty result set")
    return sum(bool(_hits(r, k)[:n].any()) for r in results) / len(results)


def recall_curve(results, k: float, n_max: int) -> list[tuple[int, float]]:
    results = list(results)
    if not results:
        return [(n, 0.0) for n in range(1, n_max + 1)]
    depth = min(len(r.tile_ids) for r in results)
    if n_max > depth:
        raise ValueError(f"curve to {n_max} exceeds the retrieved depth {depth}")
    ranks = [first_hit_rank(r, k) for r in results]
    total = len(results)
    return [(n, sum(1 for x in ranks if x is not None and x <= n) / total) for n in range(1, n_max + 1)]


def random_baseline(tile_positions: np.ndarray, query_positions: np.ndarray, k: float, n: int = 1) -> float:
    """Expected Recall@k of drawing ``n`` distinct tiles uniformly at random.

    For a query with ``c`` of ``m`` tiles within ``k`` meters the success
    probability is ``1 - C(m - c, n) / C(m, n)``; this averages it over queries.
    """
    tiles = np.asarray(tile_positions, dtype=np.float64).reshape(-1, 2)
    queries = np.asarray(query_positions, dtype=np.float64).reshape(-1, 2)
    m = len(tiles)
    if m == 0 or len(queries) == 0:
        return 0.0
    dist = np.linalg.norm(queries[:, None, :] - tiles[None, :, :], axis=2)
    counts = (dist <= k).sum(axis=1)
    probs = []
    for c in counts:
        miss = 1.0
        for j in range(min(n, m)):
            miss *= max(m - c - j, 0) / (m - j)
        probs.append(1.0 - miss)
    return float(np.mean(probs))


def evaluation_report(results, thresholds=(1.0, 5.0, 10.0), curve_k: float = 5.0, n_max: int = 10,
                      baseline: dict | None = None) -> str:
    """CSV ``K,n,recall`` rows followed by a plain-text summary block."""
    results = list(results)
    n_max = min(n_max, min((len(r.tile_ids) for r in results), default=0))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["K", "n", "recall"])
    for k in thresholds:
        w.writerow([k, 1, repr(recall_at(results, k, 1))])
    for n, value in recall_curve(results, curve_k, n_max):
        if n > 1:
            w.writerow([curve_k, n, repr(value)])
    lines = ["", "# summary", f"queries: {len(results)}"]
    for k in thresholds:
        lines.append(f"recall@{k:g}m top-1: {recall_at(results, k, 1):.4f}")
    for n in (1, 5, 10):
        if n <= n_max:
            lines.append(f"recall@{curve_k:g}m top-{n}: {recall_at(results, curve_k, n):.4f}")
    for key, value in (baseline or {}).items():
        lines.append(f"random baseline {key}: {value:.4f}")
    return buf.getvalue() + "\n".join(lines) + "\n"


def parse_report(text: str) -> list[tuple[float, int, float]]:
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#") or ":" in line or line.startswith("K,"):
            continue
        k, n, r = line.split(",")
        rows.append((float(k), int(n), float(r)))
    return rows
