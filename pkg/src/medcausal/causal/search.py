"""Greedy equivalence search over CPDAGs with insert, delete and turn phases.

Insert and delete follow Chickering (2002): operators act on the completed
partially directed graph of the current equivalence class and are scored by a
single local-score difference. The turning phase reverses one edge of a
consistent DAG extension at a time, which moves to a neighbouring class when
the reversed edge was compelled. Phases repeat until a full sweep leaves the
class unchanged. Ties go to the lexicographically smallest operator.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..errors import StructureError
from .graph import CausalGraph
from .scoring import ScoreCache

logger = logging.getLogger(__name__)

_TOL = 1e-9


@dataclass(frozen=True)
class SearchConfig:
    max_indegree: int = 4
    min_support: int = 5
    ess: float = 1.0
    max_sweeps: int = 100


class PDAG:
    """Mixed graph with directed (a, b) edges and undirected {a, b} edges."""

    def __init__(self, nodes, directed=(), undirected=()):
        self.nodes = list(nodes)
        self.directed: set[tuple[int, int]] = set(directed)
        self.undirected: set[frozenset] = {frozenset(e) for e in undirected}

    def copy(self) -> "PDAG":
        return PDAG(self.nodes, self.directed, self.undirected)

    def adjacent(self, a, b) -> bool:
        return (a, b) in self.directed or (b, a) in self.directed or frozenset((a, b)) in self.undirected

    def neighbors(self, y) -> set[int]:
        out = set()
        for e in self.undirected:
            if y in e:
                out |= e - {y}
        return out

    def parents(self, y) -> set[int]:
        return {a for a, b in self.directed if b == y}

    def children(self, y) -> set[int]:
        return {b for a, b in self.directed if a == y}

    def adj(self, y) -> set[int]:
        return self.neighbors(y) | self.parents(y) | self.children(y)

    def signature(self):
        return frozenset(self.directed), frozenset(self.undirected)


def _is_clique(g: PDAG, nodes) -> bool:
    return all(g.adjacent(a, b) for a, b in combinations(nodes, 2))


def _semi_directed_path(g: PDAG, src: int, dst: int, blocked: set[int]) -> bool:
    """True if a semi-directed path src ~> dst avoids every node in ``blocked``."""
    seen = {src}
    stack = [src]
    while stack:
        u = stack.pop()
        for v in g.neighbors(u) | g.children(u):
            if v == dst:
                return True
            if v in seen or v in blocked:
                continue
            seen.add(v)
            stack.append(v)
    return False


def pdag_to_dag(g: PDAG) -> set[tuple[int, int]]:
    """Consistent extension (Dor & Tarsi); raises if none exists."""
    work = g.copy()
    dag = set(g.directed)
    remaining = set(g.nodes)
    while remaining:
        chosen = None
        for x in sorted(remaining):
            if work.children(x):
                continue
            nbrs = work.neighbors(x)
            others = work.adj(x)
            if all(others - {y} <= work.adj(y) for y in nbrs):
                chosen = x
                break
        if chosen is None:
            raise StructureError("partially directed graph admits no consistent extension")
        for y in work.neighbors(chosen):
            dag.add((y, chosen))
        work.directed = {(a, b) for a, b in work.directed if chosen not in (a, b)}
        work.undirected = {e for e in work.undirected if chosen not in e}
        remaining.discard(chosen)
    return dag


def dag_to_cpdag(nodes, dag_edges) -> PDAG:
    """Completed PDAG of a DAG: keep v-structures, close under Meek rules 1-3."""
    parents = {n: set() for n in nodes}
    for a, b in dag_edges:
        parents[b].add(a)
    skel = {frozenset(e) for e in dag_edges}
    adjacent = lambda a, b: frozenset((a, b)) in skel
    directed = set()
    for c in nodes:
        for a, b in combinations(sorted(parents[c]), 2):
            if not adjacent(a, b):
                directed.add((a, c))
                directed.add((b, c))
    g = PDAG(nodes, directed, {e for e in skel if tuple(sorted(e)) not in directed
                                and tuple(sorted(e))[::-1] not in directed})
    changed = True
    while changed:
        changed = False
        for e in sorted(g.undirected, key=lambda s: tuple(sorted(s))):
            a, b = sorted(e)
            for x, y in ((a, b), (b, a)):
                if _meek_orients(g, x, y):
                    g.undirected.discard(e)
                    g.directed.add((x, y))
                    changed = True
                    break
            if changed:
                break
    return g


def _meek_orients(g: PDAG, x: int, y: int) -> bool:
    # R1: z -> x - y, z and y non-adjacent
    for z in g.parents(x):
        if not g.adjacent(z, y):
            return True
    # R2: x -> z -> y
    for z in g.children(x):
        if (z, y) in g.directed:
            return True
    # R3: x - z1 -> y, x - z2 -> y, z1, z2 non-adjacent
    cands = [z for z in g.neighbors(x) if (z, y) in g.directed]
    for z1, z2 in combinations(cands, 2):
        if not g.adjacent(z1, z2):
            return True
    return False


class GreedyEquivalenceSearch:
    def __init__(self, data: np.ndarray, config: SearchConfig = SearchConfig(), nodes=None):
        self.data = np.ascontiguousarray(data, dtype=np.uint8)
        self.config = config
        n_vars = self.data.shape[1]
        freq = self.data.sum(axis=0)
        self.all_nodes = list(range(n_vars))
        pool = nodes if nodes is not None else self.all_nodes
        self.nodes = [n for n in sorted(pool) if freq[n] >= config.min_support]
        co = self.data.T.astype(np.int64) @ self.data.astype(np.int64)
        self.allowed = co >= config.min_support
        self.cache = ScoreCache(self.data, config.ess)
        self.n_moves = 0

    # -- scoring helpers -------------------------------------------------
    def _s(self, node, parents) -> float:
        return self.cache.local(node, parents)

    def score_of(self, g: PDAG) -> float:
        dag = pdag_to_dag(g)
        parents = {n: set() for n in g.nodes}
        for a, b in dag:
            parents[b].add(a)
        return sum(self._s(n, p) for n, p in parents.items())

    # -- operators ---------------------------------------------------------
    def _best_insert(self, g: PDAG):
        best = None
        cap = self.config.max_indegree
        for y in self.nodes:
            pa_y = g.parents(y)
            nb_y = g.neighbors(y)
            for x in self.nodes:
                if x == y or g.adjacent(x, y) or not self.allowed[x, y]:
                    continue
                adj_x = g.adj(x)
                na = nb_y & adj_x
                t0 = sorted(nb_y - adj_x - {x})
                base_size = len(pa_y) + len(na) + 1
                if base_size > cap:
                    continue
                for k in range(0, min(len(t0), cap - base_size) + 1):
                    for t in combinations(t0, k):
                        cond = na | set(t)
                        if not _is_clique(g, cond):
                            continue
                        if _semi_directed_path(g, y, x, cond):
                            continue
                        old = pa_y | cond
                        delta = self._s(y, old | {x}) - self._s(y, old)
                        key = (x, y, t)
                        if delta > _TOL and (best is None or delta > best[0] + _TOL
                                             or (abs(delta - best[0]) <= _TOL and key < best[1])):
                            best = (delta, key)
        return best

    def _apply_insert(self, g: PDAG, x, y, t) -> PDAG:
        h = g.copy()
        h.directed.add((x, y))
        for z in t:
            h.undirected.discard(frozenset((z, y)))
            h.directed.add((z, y))
        return dag_to_cpdag(h.nodes, pdag_to_dag(h))

    def _best_delete(self, g: PDAG):
        best = None
        for y in self.nodes:
            pa_y = g.parents(y)
            nb_y = g.neighbors(y)
            for x in sorted(pa_y | nb_y):
                na = sorted(nb_y & g.adj(x))
                for k in range(len(na) + 1):
                    for hset in combinations(na, k):
                        rest = set(na) - set(hset)
                        if not _is_clique(g, rest):
                            continue
                        base = (pa_y | rest) - {x}
                        delta = self._s(y, base) - self._s(y, base | {x})
                        key = (x, y, hset)
                        if delta > _TOL and (best is None or delta > best[0] + _TOL
                                             or (abs(delta - best[0]) <= _TOL and key < best[1])):
                            best = (delta, key)
        return best

    def _apply_delete(self, g: PDAG, x, y, hset) -> PDAG:
        h = g.copy()
        h.directed.discard((x, y))
        h.undirected.discard(frozenset((x, y)))
        for z in hset:
            if frozenset((y, z)) in h.undirected:
                h.undirected.discard(frozenset((y, z)))
                h.directed.add((y, z))
            if frozenset((x, z)) in h.undirected:
                h.undirected.discard(frozenset((x, z)))
                h.directed.add((x, z))
        return dag_to_cpdag(h.nodes, pdag_to_dag(h))

    def _best_turn(self, g: PDAG):
        dag = pdag_to_dag(g)
        parents = {n: set() for n in g.nodes}
        for a, b in dag:
            parents[b].add(a)
        best = None
        for a, b in sorted(dag):
            if len(parents[a]) + 1 > self.config.max_indegree or not self.allowed[b, a]:
                continue
            trial = (dag - {(a, b)}) | {(b, a)}
            if not _acyclic(g.nodes, trial):
                continue
            delta = (self._s(a, parents[a] | {b}) + self._s(b, parents[b] - {a})
                     - self._s(a, parents[a]) - self._s(b, parents[b]))
            if delta > _TOL and (best is None or delta > best[0] + _TOL):
                best = (delta, (a, b), trial)
        return best

    # -- driver --------------------------------------------------------------
    def run(self, start: PDAG | None = None) -> PDAG:
        g = start.copy() if start is not None else PDAG(self.all_nodes)
        for sweep in range(self.config.max_sweeps):
            before = g.signature()
            while (mv := self._best_insert(g)) is not None:
                g = self._apply_insert(g, *mv[1])
                self.n_moves += 1
            while (mv := self._best_delete(g)) is not None:
                g = self._apply_delete(g, *mv[1])
                self.n_moves += 1
            while (mv := self._best_turn(g)) is not None:
                g = dag_to_cpdag(g.nodes, mv[2])
                self.n_moves += 1
            if g.signature() == before:
                break
        else:
            logger.warning("search stopped after %d sweeps without converging", self.config.max_sweeps)
        return g


def _acyclic(nodes, edges) -> bool:
    indeg = {n: 0 for n in nodes}
    out = {n: [] for n in nodes}
    for a, b in edges:
        indeg[b] += 1
        out[a].append(b)
    stack = [n for n, d in indeg.items() if d == 0]
    seen = 0
    while stack:
        n = stack.pop()
        seen += 1
        for c in out[n]:
            indeg[c] -= 1
            if indeg[c] == 0:
                stack.append(c)
    return seen == len(indeg)


def greedy_equivalence_search(data: np.ndarray, config: SearchConfig = SearchConfig(),
                              entity_kind: str = "disease", nodes=None) -> CausalGraph:
    """Learn a DAG over the columns of a binary occurrence table.

    Columns seen fewer than ``min_support`` times are left isolated, and an
    edge is only considered between columns that co-occur at least that often.
    The returned graph is the lowest-index consistent extension of the final
    equivalence class.
    """
    search = GreedyEquivalenceSearch(data, config, nodes)
    cpdag = search.run()
    edges = pdag_to_dag(cpdag)
    logger.info("%s graph: %d edges after %d moves", entity_kind, len(edges), search.n_moves)
    return CausalGraph(entity_kind, tuple(range(data.shape[1])), frozenset(edges))
