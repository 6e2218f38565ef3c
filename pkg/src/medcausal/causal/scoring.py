"""Decomposable Bayesian-Dirichlet equivalent-uniform (BDeu) score for binary data."""
from __future__ import annotations

from typing import Iterable

import numpy as np
from scipy.special import gammaln

from ..errors import ConstraintError, StructureError


def local_score(node: int, parents: Iterable[int], data: np.ndarray, *, ess: float = 1.0,
                max_indegree: int | None = None) -> float:
    """BDeu log marginal likelihood of column ``node`` given ``parents``.

    ``data`` is a binary (visits x entities) occurrence table. Parent
    configurations that never occur contribute nothing, so the cost is linear
    in the number of rows regardless of the parent count.
    """
    parents = sorted(set(parents))
    if node in parents:
        raise ConstraintError(f"node {node} cannot be its own parent")
    if max_indegree is not None and len(parents) > max_indegree:
        raise ConstraintError(f"{len(parents)} parents exceed max_indegree={max_indegree}")
    x = np.asarray(data[:, node], dtype=np.int64)
    k = len(parents)
    if k:
        weights = np.left_shift(1, np.arange(k, dtype=np.int64))
        config = np.asarray(data[:, parents], dtype=np.int64) @ weights
        codes, inv = np.unique(config, return_inverse=True)
        counts = np.zeros((len(codes), 2), dtype=np.float64)
        np.add.at(counts, (inv.ravel(), x), 1.0)
    else:
        counts = np.array([[np.sum(x == 0), np.sum(x == 1)]], dtype=np.float64)
    q = float(2 ** k)
    a_j = ess / q
    a_jk = ess / (2.0 * q)
    n_j = counts.sum(axis=1)
    score = np.sum(gammaln(a_j) - gammaln(a_j + n_j))
    score += np.sum(gammaln(a_jk + counts) - gammaln(a_jk))
    return float(score)


class ScoreCache:
    """Memoised local scores keyed by (node, parent set)."""

    def __init__(self, data: np.ndarray, ess: float = 1.0):
        self.data = np.ascontiguousarray(data, dtype=np.uint8)
        self.ess = ess
        self._cache: dict[tuple[int, frozenset], float] = {}
        self.misses = 0

    def local(self, node: int, parents: Iterable[int]) -> float:
        key = (node, frozenset(parents))
        val = self._cache.get(key)
        if val is None:
            self.misses += 1
            val = local_score(node, key[1], self.data, ess=self.ess)
            self._cache[key] = val
        return val

    def total(self, parent_sets: dict[int, Iterable[int]]) -> float:
        return sum(self.local(n, ps) for n, ps in parent_sets.items())


def total_score(graph, data: np.ndarray, cache: ScoreCache | None = None, ess: float = 1.0) -> float:
    """Sum of local scores of every node given its parents in ``graph``."""
    if not graph.is_acyclic():
        raise StructureError("total_score requires an acyclic graph")
    cache = cache or ScoreCache(data, ess)
    return cache.total({n: graph.parents(n) for n in graph.nodes})
