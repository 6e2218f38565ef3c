"""Index structures for one patient: per-visit coarse graphs, fine molecule edges, DAC groups.

Everything here is plain numpy and depends only on the data and the frozen
mining artifacts, so it is built once per patient and reused every epoch.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..causal.graph import CATEGORIES, CausalGraph, classify, visit_causal_subgraph
from ..causal.strata import RelevanceStrata
from ..ehr import MoleculeMap, PatientRecord, encode_multi_hot

DISEASE, PROCEDURE, MEDICATION = 0, 1, 2
NODE_KINDS = ("disease", "procedure", "medication")


@dataclass(frozen=True)
class CoarseRelations:
    """Stratum layer and relevance lookups for disease->med and procedure->med pairs."""

    layers_dm: np.ndarray
    layers_pm: np.ndarray
    relevance_dm: np.ndarray
    relevance_pm: np.ndarray

    @property
    def n_relations(self) -> int:
        return len(self.relevance_dm)

    @classmethod
    def from_strata(cls, dm: RelevanceStrata, pm: RelevanceStrata) -> "CoarseRelations":
        if dm.n != pm.n:
            raise ValueError("disease and procedure strata need the same layer count")
        return cls(dm.layers, pm.layers, dm.relevance, pm.relevance)

    @classmethod
    def empty(cls, n_diseases: int, n_procedures: int, n_meds: int, n: int = 5) -> "CoarseRelations":
        return cls(np.zeros((n_diseases, n_meds), np.int64), np.zeros((n_procedures, n_meds), np.int64),
                   np.zeros(n), np.zeros(n))


def fine_edges(mmap: MoleculeMap) -> tuple[np.ndarray, np.ndarray]:
    """Directed edge arrays of the molecule graph: a clique over each medication's molecules.

    A molecule pair shared by several medications yields a single edge.
    """
    pairs = set()
    for mols in mmap.members:
        for a, b in combinations(mols, 2):
            pairs.add((a, b))
            pairs.add((b, a))
    if not pairs:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    arr = np.array(sorted(pairs), dtype=np.int64)
    return arr[:, 0], arr[:, 1]


@dataclass(frozen=True)
class PatientStructure:
    """Concatenated per-visit graphs of one patient.

    Node arrays list every visit's current diseases, current procedures and
    previous-visit medications in that order. Edge arrays are directed
    (both orientations of each coarse pair). ``group`` is a compact id of
    (visit, kind, DAC category) and ``group_owner`` maps each group to its
    (visit, kind) slot ``3 * visit + kind``.
    """

    patient_id: str
    n_visits: int
    node_kind: np.ndarray
    node_index: np.ndarray
    node_visit: np.ndarray
    node_category: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_rel: np.ndarray
    edge_r: np.ndarray
    group: np.ndarray
    group_owner: np.ndarray
    targets: np.ndarray
    visit_diseases: tuple[tuple[int, ...], ...]
    visit_procedures: tuple[tuple[int, ...], ...]

    @property
    def n_nodes(self) -> int:
        return len(self.node_kind)


def build_patient_structure(record: PatientRecord, relations: CoarseRelations,
                            graphs: dict[str, CausalGraph | None] | None, n_meds: int
                            ) -> PatientStructure:
    graphs = graphs or {}
    kind_arr, idx_arr, visit_arr, cat_arr = [], [], [], []
    src, dst, rel, rval = [], [], [], []
    prev_meds: tuple[int, ...] = ()
    for t, visit in enumerate(record.visits):
        members = ((DISEASE, visit.diseases), (PROCEDURE, visit.procedures), (MEDICATION, prev_meds))
        offsets = {}
        for kind, ents in members:
            sub = visit_causal_subgraph(graphs.get(NODE_KINDS[kind]), ents)
            for e in ents:
                offsets[(kind, e)] = len(kind_arr)
                kind_arr.append(kind)
                idx_arr.append(e)
                visit_arr.append(t)
                cat_arr.append(CATEGORIES.index(classify(e, sub)))
        for kind, layers, relevance in ((DISEASE, relations.layers_dm, relations.relevance_dm),
                                        (PROCEDURE, relations.layers_pm, relations.relevance_pm)):
            for s in (visit.diseases if kind == DISEASE else visit.procedures):
                for m in prev_meds:
                    layer = int(layers[s, m])
                    if not layer:
                        continue
                    a, b = offsets[(kind, s)], offsets[(MEDICATION, m)]
                    for u, v in ((a, b), (b, a)):
                        src.append(u)
                        dst.append(v)
                        rel.append(layer - 1)
                        rval.append(float(relevance[layer - 1]))
        prev_meds = visit.medications

    kind_np = np.array(kind_arr, np.int64)
    visit_np = np.array(visit_arr, np.int64)
    cat_np = np.array(cat_arr, np.int64)
    raw_group = (visit_np * 3 + kind_np) * len(CATEGORIES) + cat_np
    uniq, group = np.unique(raw_group, return_inverse=True)
    targets = np.stack([encode_multi_hot(v.medications, n_meds) for v in record.visits]).astype(np.float64)
    return PatientStructure(
        patient_id=record.patient_id,
        n_visits=len(record.visits),
        node_kind=kind_np,
        node_index=np.array(idx_arr, np.int64),
        node_visit=visit_np,
        node_category=cat_np,
        edge_src=np.array(src, np.int64),
        edge_dst=np.array(dst, np.int64),
        edge_rel=np.array(rel, np.int64),
        edge_r=np.array(rval, np.float64),
        group=group.reshape(-1).astype(np.int64),
        group_owner=(uniq // len(CATEGORIES)).astype(np.int64),
        targets=targets,
        visit_diseases=tuple(v.diseases for v in record.visits),
        visit_procedures=tuple(v.procedures for v in record.visits),
    )
