"""Explored-state tracking and nearest-unexplored-neighbor batch allocation.

The memory wraps an immutable pool with one mutable bit per candidate. All
neighbor queries are exact brute-force scans: pools stay small enough
(tens of thousands of rows) that O(n*d) per query is cheap, and exactness
lets tests compare against an independent naive implementation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .pool import METRIC_COSINE, METRIC_L2_SQUARED, METRICS, CandidatePool


def distance(metric: str, a: Sequence[float], b: Sequence[float]) -> float:
    """Scalar distance between two vectors under a pool metric.

    cosine: 1 - a.b / (|a||b|), defined only for nonzero vectors, in [0, 2].
    l2-squared: sum((a_i - b_i)^2).
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape or av.ndim != 1:
        raise ValueError(f"vector length mismatch: {av.shape} vs {bv.shape}")
    if metric == METRIC_L2_SQUARED:
        diff = av - bv
        return float(np.square(diff).sum())
    na = float(np.linalg.norm(av))
    nb = float(np.linalg.norm(bv))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine distance undefined for zero vectors")
    return float(1.0 - float(av @ bv) / (na * nb))


def embedding_distances(
    matrix: np.ndarray,
    query: np.ndarray,
    metric: str,
    norms: np.ndarray | None = None,
) -> np.ndarray:
    """Distances from every matrix row to the query vector (vectorized)."""
    if metric == METRIC_L2_SQUARED:
        diff = matrix - query
        return np.square(diff).sum(axis=1)
    if norms is None:
        norms = np.linalg.norm(matrix, axis=1)
    qn = float(np.linalg.norm(query))
    if qn == 0.0:
        raise ValueError("cosine distance undefined for a zero query vector")
    return 1.0 - (matrix @ query) / (norms * qn)


def center_quotas(batch_size: int, num_centers: int) -> list[int]:
    """Equal per-center budgets; the first batch_size % num_centers centers
    get one extra so the quotas sum to batch_size."""
    if batch_size < 1:
        raise ValueError("batch size must be positive")
    if num_centers < 1:
        raise ValueError("need at least one center")
    base, extra = divmod(batch_size, num_centers)
    return [base + 1] * extra + [base] * (num_centers - extra)


@dataclass(frozen=True)
class CenterAllocation:
    """Planned per-center budgets for one batch, exposed for inspection."""

    centers: tuple[np.ndarray, ...]
    quotas: tuple[int, ...]

    @property
    def budget(self) -> int:
        return sum(self.quotas)


class CandidateMemory:
    """Explored flags over a pool plus exact nearest-unexplored queries.

    Flags only move false -> true. One memory belongs to one run; queries
    between mutations are safe, concurrent mutation is not supported.
    """

    def __init__(self, pool: CandidatePool):
        self._pool = pool
        self._explored = np.zeros(len(pool), dtype=bool)
        self._norms: np.ndarray | None = None
        if pool.metric == METRIC_COSINE:
            norms = np.linalg.norm(pool.embeddings.matrix, axis=1)
            if np.any(norms == 0.0):
                raise ValueError(
                    "cosine metric pool contains a zero embedding vector"
                )
            self._norms = norms

    @property
    def pool(self) -> CandidatePool:
        return self._pool

    @property
    def explored_mask(self) -> np.ndarray:
        """Copy of the explored flags in pool index order."""
        return self._explored.copy()

    @property
    def num_explored(self) -> int:
        return int(self._explored.sum())

    @property
    def num_unexplored(self) -> int:
        return len(self._pool) - self.num_explored

    def is_explored(self, name: str) -> bool:
        return bool(self._explored[self._pool.index_of(name)])

    def explored_names(self) -> list[str]:
        return [self._pool.names[i] for i in np.flatnonzero(self._explored)]

    def unexplored_names(self) -> list[str]:
        return [self._pool.names[i] for i in np.flatnonzero(~self._explored)]

    def mark_explored(self, names: Iterable[str]) -> None:
        """Flag candidates as explored. All-or-nothing: an unknown name
        leaves every flag untouched. Re-marking is a no-op."""
        idx = [self._pool.index_of(name) for name in names]
        self._explored[idx] = True

    def _query_vector(self, query: Sequence[float]) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.ndim != 1 or q.shape[0] != self._pool.embeddings.dim:
            raise ValueError(
                f"query has shape {q.shape}, pool dim is {self._pool.embeddings.dim}"
            )
        return q

    def nearest_unexplored(self, query: Sequence[float], k: int) -> list[str]:
        """The k unexplored candidates nearest the query vector.

        Sorted by ascending distance under the pool metric; exact distance
        ties break toward the lower candidate index. Returns fewer than k
        names only when fewer unexplored candidates remain.
        """
        if k < 1:
            raise ValueError("k must be positive")
        q = self._query_vector(query)
        dists = embedding_distances(
            self._pool.embeddings.matrix, q, self._pool.metric, self._norms
        )
        dists = np.where(self._explored, np.inf, dists)
        take = min(k, self.num_unexplored)
        if take == 0:
            return []
        order = np.argsort(dists, kind="stable")[:take]
        return [self._pool.names[i] for i in order]

    def plan_allocation(
        self, centers: Sequence[Sequence[float]], batch_size: int
    ) -> CenterAllocation:
        """Quotas for allocate_batch without performing the selection."""
        if len(centers) == 0:
            raise ValueError("centers list is empty")
        vecs = tuple(self._query_vector(c) for c in centers)
        return CenterAllocation(vecs, tuple(center_quotas(batch_size, len(vecs))))

    def allocate_batch(
        self, centers: Sequence[Sequence[float]], batch_size: int
    ) -> list[str]:
        """Fill a batch by expanding each center over its nearest unexplored
        neighbors.

        Centers are processed in list order; every selected candidate is
        marked explored immediately, so later centers can never reselect it.
        Returns min(batch_size, unexplored) names, duplicate-free.
        """
        plan = self.plan_allocation(centers, batch_size)
        selected: list[str] = []
        for center, quota in zip(plan.centers, plan.quotas):
            if quota == 0:
                continue
            if self.num_unexplored == 0:
                break
            got = self.nearest_unexplored(center, quota)
            self.mark_explored(got)
            selected.extend(got)
        return selected
