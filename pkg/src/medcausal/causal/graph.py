"""Directed graphs over one entity kind, visit-induced subgraphs and their files."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from ..ehr import Vocabulary
from ..errors import DataFormatError, StructureError

CAUSE, EFFECT, MIDDLE, INDEPENDENT = "cause", "effect", "middle", "independent"
CATEGORIES = (CAUSE, EFFECT, MIDDLE, INDEPENDENT)


@dataclass(frozen=True)
class CausalGraph:
    entity_kind: str
    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]] = frozenset()
    _parents: dict = field(init=False, repr=False, compare=False)
    _children: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(sorted(set(int(n) for n in self.nodes)))
        edges = frozenset((int(a), int(b)) for a, b in self.edges)
        node_set = set(nodes)
        for a, b in edges:
            if a == b:
                raise StructureError(f"self-loop on {a}")
            if a not in node_set or b not in node_set:
                raise StructureError(f"edge {(a, b)} references a node outside the graph")
        parents = {n: set() for n in nodes}
        children = {n: set() for n in nodes}
        for a, b in edges:
            parents[b].add(a)
            children[a].add(b)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "_parents", {n: frozenset(p) for n, p in parents.items()})
        object.__setattr__(self, "_children", {n: frozenset(c) for n, c in children.items()})

    def parents(self, node: int) -> frozenset[int]:
        return self._parents.get(node, frozenset())

    def children(self, node: int) -> frozenset[int]:
        return self._children.get(node, frozenset())

    def skeleton(self) -> set[frozenset]:
        return {frozenset(e) for e in self.edges}

    def is_acyclic(self) -> bool:
        indeg = {n: len(self._parents[n]) for n in self.nodes}
        stack = [n for n, d in indeg.items() if d == 0]
        seen = 0
        while stack:
            n = stack.pop()
            seen += 1
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    stack.append(c)
        return seen == len(self.nodes)

    def with_edge(self, a: int, b: int) -> "CausalGraph":
        return CausalGraph(self.entity_kind, self.nodes, self.edges | {(a, b)})

    def without_edge(self, a: int, b: int) -> "CausalGraph":
        return CausalGraph(self.entity_kind, self.nodes, self.edges - {(a, b)})


@dataclass(frozen=True)
class VisitCausalSubgraph:
    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]

    def in_degree(self, node: int) -> int:
        return sum(1 for _, b in self.edges if b == node)

    def out_degree(self, node: int) -> int:
        return sum(1 for a, _ in self.edges if a == node)


def visit_causal_subgraph(graph: CausalGraph | None, entities: Iterable[int]) -> VisitCausalSubgraph:
    """Restrict ``graph`` to one visit's entities; unknown entities stay isolated."""
    ents = tuple(sorted(set(int(e) for e in entities)))
    if graph is None:
        return VisitCausalSubgraph(ents, frozenset())
    keep = set(ents)
    return VisitCausalSubgraph(ents, frozenset((a, b) for a, b in graph.edges if a in keep and b in keep))


def classify(entity: int, sub: VisitCausalSubgraph) -> str:
    """Position of ``entity`` in its visit subgraph: cause, effect, middle or independent."""
    if entity not in sub.nodes:
        raise StructureError(f"entity {entity} is not in the visit subgraph")
    fan_in, fan_out = sub.in_degree(entity), sub.out_degree(entity)
    if fan_out and not fan_in:
        return CAUSE
    if fan_in and not fan_out:
        return EFFECT
    if fan_in and fan_out:
        return MIDDLE
    return INDEPENDENT


def write_graph(path: str | Path, graph: CausalGraph, vocab: Vocabulary) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# kind: {graph.entity_kind}\n")
        fh.write("# nodes: " + " ".join(vocab.codes[n] for n in graph.nodes) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parent", "child"])
        for a, b in sorted(graph.edges):
            w.writerow([vocab.codes[a], vocab.codes[b]])


def read_graph(path: str | Path, vocab: Vocabulary) -> CausalGraph:
    path = Path(path)
    kind = None
    nodes = None
    edges = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("# kind:"):
                kind = line.split(":", 1)[1].strip()
            elif line.startswith("# nodes:"):
                nodes = [vocab.lookup(c) for c in line.split(":", 1)[1].split()]
            elif line == "parent,child":
                continue
            else:
                parts = line.split(",")
                if len(parts) != 2:
                    raise DataFormatError("expected 'parent,child'", path, lineno)
                edges.append((vocab.lookup(parts[0]), vocab.lookup(parts[1])))
    if kind is None:
        raise DataFormatError("missing '# kind:' header", path)
    if kind != vocab.kind:
        raise DataFormatError(f"graph kind {kind!r} does not match vocabulary {vocab.kind!r}", path)
    if nodes is None:
        nodes = range(len(vocab))
    return CausalGraph(kind, tuple(nodes), frozenset(edges))
