"""EHR data model, vocabularies, file loaders, splitting and bootstrap sampling.

Records files are JSON lines. An optional first line carries the vocabularies::

    {"vocabularies": {"disease": [...], "procedure": [...], "medication": [...]}}

and every other line is one patient::

    {"patient_id": "p0001",
     "visits": [{"diseases": ["D03"], "procedures": ["P01"], "medications": ["M05"]}, ...]}

A visit may also be written as a bare three-element list ``[diseases, procedures,
medications]``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError, UnknownCodeError

logger = logging.getLogger(__name__)

KINDS = ("disease", "procedure", "medication", "molecule")
VISIT_FIELDS = ("diseases", "procedures", "medications")
DDI_HEADER = ("med_a", "med_b")
MOLECULE_HEADER = ("medication", "molecule")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered code list of one entity kind with its code -> index map."""

    kind: str
    codes: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown vocabulary kind {self.kind!r}")
        codes = tuple(str(c) for c in self.codes)
        if len(set(codes)) != len(codes):
            raise ConfigError(f"duplicate codes in {self.kind} vocabulary")
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "index", {c: i for i, c in enumerate(codes)})

    def __len__(self):
        return len(self.codes)

    def __contains__(self, code):
        return code in self.index

    def lookup(self, code: str) -> int:
        try:
            return self.index[code]
        except KeyError:
            raise UnknownCodeError(f"unknown {self.kind} code {code!r}") from None

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.codes[i] for i in indices]


@dataclass(frozen=True)
class Vocabularies:
    disease: Vocabulary
    procedure: Vocabulary
    medication: Vocabulary
    molecule: Vocabulary | None = None

    def of(self, kind: str) -> Vocabulary:
        vocab = getattr(self, kind)
        if vocab is None:
            raise ConfigError(f"no {kind} vocabulary loaded")
        return vocab

    def with_molecules(self, molecule: Vocabulary) -> "Vocabularies":
        return replace(self, molecule=molecule)


@dataclass(frozen=True)
class Visit:
    """One admission: sorted index tuples of diseases, procedures and medications."""

    diseases: tuple[int, ...]
    procedures: tuple[int, ...]
    medications: tuple[int, ...]

    def __post_init__(self):
        for name in VISIT_FIELDS:
            object.__setattr__(self, name, tuple(sorted(set(int(i) for i in getattr(self, name)))))

    def codes(self, kind: str) -> tuple[int, ...]:
        return getattr(self, kind + "s")

    @property
    def complete(self) -> bool:
        return bool(self.diseases and self.procedures and self.medications)


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    visits: tuple[Visit, ...]

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(self.visits))
        if not self.visits:
            raise ConfigError(f"patient {self.patient_id} has no visits")


@dataclass(frozen=True)
class DDIMatrix:
    """Symmetric 0/1 drug-drug interaction adjacency over medications."""

    matrix: np.ndarray
    n_skipped: int = 0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.int8)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ConfigError("DDI matrix must be square")
        if not np.array_equal(m, m.T):
            raise ConfigError("DDI matrix must be symmetric")
        if np.any(np.diag(m)):
            raise ConfigError("DDI matrix must have a zero diagonal")
        if not np.all((m == 0) | (m == 1)):
            raise ConfigError("DDI entries must be 0 or 1")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_pairs(cls, n: int, pairs: Iterable[tuple[int, int]]) -> "DDIMatrix":
        m = np.zeros((n, n), dtype=np.int8)
        for a, b in pairs:
            if a == b:
                raise ConfigError(f"self-interaction for medication {a}")
            m[a, b] = m[b, a] = 1
        return cls(m)

    def __len__(self):
        return self.matrix.shape[0]

    def pairs(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.matrix, 1))
        return list(zip(i.tolist(), j.tolist()))


@dataclass(frozen=True)
class MoleculeMap:
    """Medication index -> molecule indices (many-to-many)."""

    members: tuple[tuple[int, ...], ...]
    n_molecules: int

    def __post_init__(self):
        members = tuple(tuple(sorted(set(int(s) for s in mols))) for mols in self.members)
        for i, mols in enumerate(members):
            if not mols:
                raise ConfigError(f"medication {i} has no molecules")
            if mols[0] < 0 or mols[-1] >= self.n_molecules:
                raise ConfigError(f"medication {i} references an invalid molecule index")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)

    def mask(self) -> np.ndarray:
        out = np.zeros((len(self.members), self.n_molecules), dtype=bool)
        for i, mols in enumerate(self.members):
            out[i, list(mols)] = True
        return out


# --------------------------------------------------------------------------- #
# multi-hot encoding


def encode_multi_hot(codes: Iterable[int], vocab: Vocabulary | int) -> np.ndarray:
    size = vocab if isinstance(vocab, int) else len(vocab)
    bits = np.zeros(size, dtype=np.uint8)
    for i in codes:
        if not 0 <= i < size:
            raise IndexError(f"index {i} outside vocabulary of size {size}")
        bits[i] = 1
    return bits


def decode_multi_hot(bits: np.ndarray) -> frozenset[int]:
    return frozenset(np.flatnonzero(np.asarray(bits)).tolist())


# --------------------------------------------------------------------------- #
# records


def _parse_visit(raw, path, lineno):
    if isinstance(raw, dict):
        try:
            groups = [raw[name] for name in VISIT_FIELDS]
        except KeyError as exc:
            raise DataFormatError(f"visit missing field {exc.args[0]!r}", path, lineno) from None
    elif isinstance(raw, (list, tuple)) and len(raw) == 3:
        groups = list(raw)
    else:
        raise DataFormatError("visit must be an object or a 3-element list", path, lineno)
    for g in groups:
        if not isinstance(g, list):
            raise DataFormatError("visit code groups must be lists", path, lineno)
    return [[str(c) for c in g] for g in groups]


def load_records(
    path: str | Path,
    vocabularies: Vocabularies | None = None,
    *,
    strict: bool = False,
    min_visits: int = 1,
) -> tuple[list[PatientRecord], Vocabularies]:
    """Read a records file, dropping incomplete visits and then empty patients.

    Vocabularies come from, in order: the ``vocabularies`` argument, the file's
    header line, or first appearance in the data. With fixed vocabularies an
    unseen code raises :class:`UnknownCodeError`. ``min_visits`` drops patients
    with fewer retained visits. ``strict`` is accepted for interface parity; the
    records loader has no warning-level conditions.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    fixed = vocabularies
    growing: dict[str, dict[str, int]] = {k: {} for k in KINDS[:3]}
    raw_patients = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(obj, dict):
                raise DataFormatError("each line must be a JSON object", path, lineno)
            if "vocabularies" in obj:
                if raw_patients:
                    raise DataFormatError("vocabulary header must be the first line", path, lineno)
                if fixed is None:
                    header = obj["vocabularies"]
                    try:
                        fixed = Vocabularies(*(Vocabulary(k, header[k]) for k in KINDS[:3]))
                    except KeyError as exc:
                        raise DataFormatError(f"header lacks {exc.args[0]!r}", path, lineno) from None
                continue
            if "patient_id" not in obj or "visits" not in obj:
                raise DataFormatError("patient line needs 'patient_id' and 'visits'", path, lineno)
            if not isinstance(obj["visits"], list):
                raise DataFormatError("'visits' must be a list", path, lineno)
            visits = [_parse_visit(v, path, lineno) for v in obj["visits"]]
            raw_patients.append((str(obj["patient_id"]), visits, lineno))

    if fixed is None:
        for _, visits, _ in raw_patients:
            for groups in visits:
                for kind, codes in zip(KINDS[:3], groups):
                    for c in codes:
                        growing[kind].setdefault(c, len(growing[kind]))
        fixed = Vocabularies(*(Vocabulary(k, list(growing[k])) for k in KINDS[:3]))

    records = []
    n_dropped_visits = 0
    for pid, visits, lineno in raw_patients:
        kept = []
        for groups in visits:
            try:
                idx = [[fixed.of(k).lookup(c) for c in codes] for k, codes in zip(KINDS[:3], groups)]
            except UnknownCodeError as exc:
                raise UnknownCodeError(str(exc), path, lineno) from None
            visit = Visit(*idx)
            if visit.complete:
                kept.append(visit)
            else:
                n_dropped_visits += 1
        if len(kept) >= max(min_visits, 1):
            records.append(PatientRecord(pid, tuple(kept)))
    if n_dropped_visits:
        logger.info("dropped %d incomplete visits from %s", n_dropped_visits, path)
    return records, fixed


def write_records(path: str | Path, records: Sequence[PatientRecord], vocabs: Vocabularies,
                  header: bool = True) -> None:
    path = Path(path)
    with path.open("w") as fh:
        if header:
            head = {k: list(vocabs.of(k).codes) for k in KINDS[:3]}
            fh.write(json.dumps({"vocabularies": head}, separators=(",", ":")) + "\n")
        for rec in records:
            visits = [
                {name: vocabs.of(kind).decode(v.codes(kind)) for name, kind in zip(VISIT_FIELDS, KINDS[:3])}
                for v in rec.visits
            ]
            fh.write(json.dumps({"patient_id": rec.patient_id, "visits": visits},
                                separators=(",", ":")) + "\n")


# --------------------------------------------------------------------------- #
# DDI and molecule tables


def _csv_rows(path: Path, header: tuple[str, str]):
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            row = [c.strip() for c in row]
            if lineno == 1 and tuple(row) == header:
                continue
            if len(row) != 2:
                raise DataFormatError(f"expected 2 columns, got {len(row)}", path, lineno)
            yield lineno, row


def load_ddi(path: str | Path, med_vocab: Vocabulary, *, strict: bool = False) -> DDIMatrix:
    path = Path(path)
    n = len(med_vocab)
    m = np.zeros((n, n), dtype=np.int8)
    skipped = 0
    for lineno, (a, b) in _csv_rows(path, DDI_HEADER):
        if a == b:
            raise DataFormatError(f"self-interaction for {a!r}", path, lineno)
        if a not in med_vocab or b not in med_vocab:
            if strict:
                missing = a if a not in med_vocab else b
                raise UnknownCodeError(f"unknown medication code {missing!r}", path, lineno)
            skipped += 1
            continue
        i, j = med_vocab.index[a], med_vocab.index[b]
        m[i, j] = m[j, i] = 1
    if skipped:
        logger.warning("skipped %d DDI rows with unknown medication codes in %s", skipped, path)
    return DDIMatrix(m, n_skipped=skipped)


def write_ddi(path: str | Path, ddi: DDIMatrix, med_vocab: Vocabulary) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DDI_HEADER)
        for i, j in ddi.pairs():
            w.writerow([med_vocab.codes[i], med_vocab.codes[j]])


def load_molecule_map(path: str | Path, med_vocab: Vocabulary, *,
                      strict: bool = False) -> tuple[MoleculeMap, Vocabulary]:
    """Read (medication, molecule) rows. Medications absent from the file get a
    private molecule of their own so every medication composes from something."""
    path = Path(path)
    mol_index: dict[str, int] = {}
    members: list[set[int]] = [set() for _ in range(len(med_vocab))]
    skipped = 0
    for lineno, (med, mol) in _csv_rows(path, MOLECULE_HEADER):
        if med not in med_vocab:
            if strict:
                raise UnknownCodeError(f"unknown medication code {med!r}", path, lineno)
            skipped += 1
            continue
        members[med_vocab.index[med]].add(mol_index.setdefault(mol, len(mol_index)))
    if skipped:
        logger.warning("skipped %d molecule rows with unknown medication codes in %s", skipped, path)
    for i, mols in enumerate(members):
        if not mols:
            code = f"__solo__{med_vocab.codes[i]}"
            mols.add(mol_index.setdefault(code, len(mol_index)))
    mol_vocab = Vocabulary("molecule", list(mol_index))
    return MoleculeMap(tuple(tuple(m) for m in members), len(mol_vocab)), mol_vocab


def write_molecule_map(path: str | Path, mmap: MoleculeMap, med_vocab: Vocabulary,
                       mol_vocab: Vocabulary) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MOLECULE_HEADER)
        for i, mols in enumerate(mmap.members):
            for s in mols:
                w.writerow([med_vocab.codes[i], mol_vocab.codes[s]])


# --------------------------------------------------------------------------- #
# splitting and bootstrap


def split_dataset(records: Sequence[PatientRecord], ratios=(2 / 3, 1 / 6, 1 / 6), seed: int = 0):
    """Patient-level train/val/test partition, deterministic for a given seed."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(records)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * ratios[1]))
    n_test = int(round(n * ratios[2]))
    n_train = n - n_val - n_test
    pick = lambda idx: [records[i] for i in sorted(idx.tolist())]
    return (pick(order[:n_train]), pick(order[n_train:n_train + n_val]),
            pick(order[n_train + n_val:]))


def bootstrap_rounds(test: Sequence, rounds: int = 10, fraction: float = 0.8, seed: int = 0,
                     replace: bool = True) -> list[list]:
    """Draw ``rounds`` samples of ceil(fraction * |test|) patients."""
    if len(test) == 0:
        raise ConfigError("cannot bootstrap an empty test set")
    if rounds < 1 or not 0 < fraction <= 1:
        raise ConfigError("bootstrap needs rounds >= 1 and 0 < fraction <= 1")
    rng = np.random.default_rng(seed)
    size = math.ceil(fraction * len(test))
    out = []
    for _ in range(rounds):
        idx = rng.choice(len(test), size=size, replace=replace)
        out.append([test[i] for i in idx.tolist()])
    return out


def visit_matrix(records: Sequence[PatientRecord], kind: str, size: int) -> np.ndarray:
    """Binary visit-by-entity occurrence table (one row per visit)."""
    rows = [v for rec in records for v in rec.visits]
    out = np.zeros((len(rows), size), dtype=np.uint8)
    for r, v in enumerate(rows):
        out[r, list(v.codes(kind))] = 1
    return out
