"""Synthetic EHR corpus with a planted disease DAG and planted medication responses.

Diseases are drawn by ancestral sampling over a random DAG, so children co-occur
with their parents. Every medication responds to one source entity (a disease
or a procedure) with a planted probability, and otherwise appears only at a
small spurious rate. That makes the confounding pattern "child disease looks
associated with its parent's medication" present by construction, which is
what the causal-effect estimator is supposed to see through.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .ehr import (DDIMatrix, MoleculeMap, PatientRecord, Visit, Vocabularies, Vocabulary,
                  write_ddi, write_molecule_map, write_records)
from .errors import ConfigError

FILES = {
    "records": "records.jsonl",
    "ddi": "ddi.csv",
    "molecules": "molecules.csv",
    "ground_truth": "ground_truth.json",
    "spec": "generator_spec.json",
}


@dataclass(frozen=True)
class SyntheticSpec:
    n_diseases: int = 30
    n_procedures: int = 10
    n_medications: int = 20
    n_molecules: int = 15
    n_patients: int = 2000
    seed: int = 0
    dag_edge_density: float = 0.08
    max_parents: int = 3
    disease_rate_low: float = 0.01
    disease_rate_high: float = 0.05
    child_rate: float = 0.4
    persistence: float = 0.3
    mean_extra_visits: float = 1.4
    max_visits: int = 8
    procedure_rate: float = 0.7
    procedure_noise: float = 0.02
    spurious_rate: float = 0.01
    procedure_targets: int = 4
    rho_levels: tuple[float, ...] = (0.99, 0.95, 0.9, 0.98, 0.8)
    ddi_density: float = 0.1
    max_molecules_per_med: int = 3
    # explicit (kind, source index, medication index, rho) rows override random planting
    planted: tuple[tuple[str, int, int, float], ...] = field(default_factory=tuple)

    def validate(self) -> None:
        sizes = (self.n_diseases, self.n_procedures, self.n_medications, self.n_molecules)
        if min(sizes) < 2:
            raise ConfigError("every vocabulary needs at least 2 entries")
        if self.n_patients < 1:
            raise ConfigError("n_patients must be positive")
        probs = {
            "dag_edge_density": self.dag_edge_density, "disease_rate_low": self.disease_rate_low,
            "disease_rate_high": self.disease_rate_high, "child_rate": self.child_rate,
            "persistence": self.persistence, "procedure_rate": self.procedure_rate,
            "procedure_noise": self.procedure_noise, "spurious_rate": self.spurious_rate,
            "ddi_density": self.ddi_density,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name}={p} is not a probability")
        if self.disease_rate_low > self.disease_rate_high:
            raise ConfigError("disease_rate_low exceeds disease_rate_high")
        if self.spurious_rate > 0.05:
            raise ConfigError("spurious_rate must be at most 0.05")
        if any(not 0.0 <= r <= 1.0 for r in self.rho_levels) or not self.rho_levels:
            raise ConfigError("rho_levels must be non-empty probabilities")
        if not self.planted:
            if not 0 <= self.procedure_targets <= min(self.n_medications, self.n_procedures):
                raise ConfigError("procedure_targets out of range")
        for kind, src, med, rho in self.planted:
            limit = self.n_diseases if kind == "disease" else self.n_procedures
            if kind not in ("disease", "procedure") or not 0 <= src < limit:
                raise ConfigError(f"bad planted source {(kind, src)}")
            if not 0 <= med < self.n_medications or not 0.0 <= rho <= 1.0:
                raise ConfigError(f"bad planted pair {(kind, src, med, rho)}")
        if self.max_visits < 1 or self.mean_extra_visits < 0 or self.max_molecules_per_med < 1:
            raise ConfigError("visit/molecule counts must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "rho_levels" in d:
            d["rho_levels"] = tuple(float(x) for x in d["rho_levels"])
        if "planted" in d:
            d["planted"] = tuple((str(k), int(s), int(m), float(r)) for k, s, m, r in d["planted"])
        return cls(**d)


@dataclass(frozen=True)
class SyntheticGroundTruth:
    true_disease_dag: tuple[tuple[str, str], ...]
    true_effect_pairs: tuple[tuple[str, str, float], ...]
    ddi_pairs: tuple[tuple[str, str], ...]

    def to_json(self) -> str:
        return json.dumps(
            {"true_disease_dag": [list(e) for e in self.true_disease_dag],
             "true_effect_pairs": [list(e) for e in self.true_effect_pairs],
             "ddi_pairs": [list(e) for e in self.ddi_pairs]},
            indent=1)

    @classmethod
    def from_json(cls, text: str) -> "SyntheticGroundTruth":
        d = json.loads(text)
        return cls(tuple(tuple(e) for e in d["true_disease_dag"]),
                   tuple((a, b, float(r)) for a, b, r in d["true_effect_pairs"]),
                   tuple(tuple(e) for e in d["ddi_pairs"]))


class SyntheticDataset(NamedTuple):
    records: list[PatientRecord]
    vocabs: Vocabularies
    ddi: DDIMatrix
    molecules: MoleculeMap
    truth: SyntheticGroundTruth


def _codes(prefix: str, n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def _noisy_or(p: float, q: float) -> float:
    return 1.0 - (1.0 - p) * (1.0 - q)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    D, P, M, S = spec.n_diseases, spec.n_procedures, spec.n_medications, spec.n_molecules

    topo = rng.permutation(D)
    parents: list[list[int]] = [[] for _ in range(D)]
    for b in range(1, D):
        for a in range(b):
            if len(parents[topo[b]]) < spec.max_parents and rng.random() < spec.dag_edge_density:
                parents[topo[b]].append(int(topo[a]))
    base = rng.uniform(spec.disease_rate_low, spec.disease_rate_high, size=D)

    proc_links = [rng.choice(D, size=int(rng.integers(1, 3)), replace=False).tolist() for _ in range(P)]

    if spec.planted:
        planted = [(k, int(s), int(m), float(r)) for k, s, m, r in spec.planted]
    else:
        # every disease gets a treatment; surplus sources double up on medications
        procs = rng.permutation(P)[:spec.procedure_targets].tolist()
        sources = [("procedure", p) for p in procs] + [("disease", d) for d in rng.permutation(D).tolist()]
        med_order = rng.permutation(M).tolist()
        planted = [(kind, src, med_order[i % M], float(spec.rho_levels[i % len(spec.rho_levels)]))
                   for i, (kind, src) in enumerate(sources)]
    by_med: list[list[tuple[str, int, float]]] = [[] for _ in range(M)]
    for kind, src, med, rho in planted:
        by_med[med].append((kind, src, rho))

    records = []
    pid = 0
    while len(records) < spec.n_patients:
        n_visits = min(1 + int(rng.poisson(spec.mean_extra_visits)), spec.max_visits)
        prev: set[int] = set()
        visits = []
        for _ in range(n_visits):
            present = np.zeros(D, dtype=bool)
            for node in topo:
                p = base[node]
                if node in prev:
                    p = _noisy_or(p, spec.persistence)
                if any(present[q] for q in parents[node]):
                    p = _noisy_or(p, spec.child_rate)
                present[node] = rng.random() < p
            if not present.any():
                present[rng.integers(D)] = True
            procs_on = np.zeros(P, dtype=bool)
            for j in range(P):
                p = spec.procedure_noise
                if any(present[d] for d in proc_links[j]):
                    p = _noisy_or(p, spec.procedure_rate)
                procs_on[j] = rng.random() < p
            if not procs_on.any():
                procs_on[rng.integers(P)] = True
            meds = []
            for m in range(M):
                on = rng.random() < spec.spurious_rate
                for kind, src, rho in by_med[m]:
                    active = present[src] if kind == "disease" else procs_on[src]
                    if active and rng.random() < rho:
                        on = True
                if on:
                    meds.append(m)
            prev = set(np.flatnonzero(present).tolist())
            if meds:
                visits.append(Visit(np.flatnonzero(present).tolist(),
                                    np.flatnonzero(procs_on).tolist(), meds))
        if visits:
            records.append(PatientRecord(f"p{pid:05d}", tuple(visits)))
        pid += 1

    # interacting pairs are the ones clinicians rarely co-prescribe
    co = np.zeros((M, M))
    for rec in records:
        for v in rec.visits:
            idx = list(v.medications)
            co[np.ix_(idx, idx)] += 1
    iu, ju = np.triu_indices(M, 1)
    tiebreak = rng.random(len(iu))
    order = np.lexsort((tiebreak, co[iu, ju]))
    n_ddi = int(round(spec.ddi_density * len(iu)))
    ddi_pairs = [(int(iu[k]), int(ju[k])) for k in sorted(order[:n_ddi].tolist())]
    ddi = DDIMatrix.from_pairs(M, ddi_pairs)

    members = []
    for _ in range(M):
        k = int(rng.integers(1, spec.max_molecules_per_med + 1))
        members.append(tuple(rng.choice(S, size=min(k, S), replace=False).tolist()))
    mmap = MoleculeMap(tuple(members), S)

    vocabs = Vocabularies(Vocabulary("disease", _codes("D", D)),
                          Vocabulary("procedure", _codes("P", P)),
                          Vocabulary("medication", _codes("M", M)),
                          Vocabulary("molecule", _codes("S", S)))
    dcodes, mcodes = vocabs.disease.codes, vocabs.medication.codes
    truth = SyntheticGroundTruth(
        true_disease_dag=tuple(sorted((dcodes[p], dcodes[c]) for c in range(D) for p in parents[c])),
        true_effect_pairs=tuple(
            (vocabs.of(kind).codes[src], mcodes[med], rho) for kind, src, med, rho in planted),
        ddi_pairs=tuple((mcodes[a], mcodes[b]) for a, b in ddi_pairs),
    )
    return SyntheticDataset(records, vocabs, ddi, mmap, truth)


def write_synthetic(out_dir: str | Path, data: SyntheticDataset, spec: SyntheticSpec) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in FILES.items()}
    write_records(paths["records"], data.records, data.vocabs)
    write_ddi(paths["ddi"], data.ddi, data.vocabs.medication)
    write_molecule_map(paths["molecules"], data.molecules, data.vocabs.medication, data.vocabs.molecule)
    paths["ground_truth"].write_text(data.truth.to_json() + "\n")
    spec_d = asdict(spec)
    spec_d["planted"] = [list(p) for p in spec.planted]
    spec_d["rho_levels"] = list(spec.rho_levels)
    paths["spec"].write_text(json.dumps(spec_d, indent=1, sort_keys=True) + "\n")
    return paths
