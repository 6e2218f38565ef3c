import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from medcausal.ehr import (DDIMatrix, MoleculeMap, PatientRecord, Visit, Vocabularies, Vocabulary,
                           bootstrap_rounds, decode_multi_hot, encode_multi_hot, load_ddi,
                           load_molecule_map, load_records, split_dataset, write_records)
from medcausal.errors import ConfigError, DataFormatError, UnknownCodeError


def _vocabs():
    return Vocabularies(Vocabulary("disease", ["D0", "D1", "D2"]),
                        Vocabulary("procedure", ["P0", "P1"]),
                        Vocabulary("medication", ["M0", "M1", "M2", "M3"]))


def _patients(n):
    return [PatientRecord(f"p{i}", (Visit([i % 3], [0], [i % 4]),)) for i in range(n)]


# -- vocabulary and multi-hot ------------------------------------------------


def test_vocabulary_is_a_bijection():
    v = Vocabulary("disease", ["a", "b", "c"])
    assert [v.lookup(c) for c in v.codes] == [0, 1, 2]
    assert v.decode([2, 0]) == ["c", "a"]
    with pytest.raises(UnknownCodeError):
        v.lookup("z")


def test_vocabulary_rejects_duplicates_and_bad_kind():
    with pytest.raises(ConfigError):
        Vocabulary("disease", ["a", "a"])
    with pytest.raises(ConfigError):
        Vocabulary("drug", ["a"])


@settings(max_examples=1000)
@given(st.integers(1, 60).flatmap(lambda n: st.tuples(st.just(n), st.sets(st.integers(0, n - 1)))))
def test_multi_hot_round_trip(case):
    n, codes = case
    bits = encode_multi_hot(codes, n)
    assert len(bits) == n
    assert decode_multi_hot(bits) == frozenset(codes)


def test_multi_hot_examples():
    assert encode_multi_hot([0, 2], 4).tolist() == [1, 0, 1, 0]
    assert encode_multi_hot([], 3).tolist() == [0, 0, 0]
    with pytest.raises(IndexError):
        encode_multi_hot([5], 3)


# -- records -------------------------------------------------------------------


def test_records_round_trip(tmp_path):
    v = _vocabs()
    recs = [PatientRecord("a", (Visit([0, 2], [1], [3]), Visit([1], [0], [0, 1]))),
            PatientRecord("b", (Visit([2], [0, 1], [2]),))]
    path = tmp_path / "r.jsonl"
    write_records(path, recs, v)
    back, vocabs = load_records(path)
    assert back == recs
    assert vocabs.medication.codes == v.medication.codes


def test_load_drops_incomplete_visits_and_empty_patients(tmp_path):
    path = tmp_path / "r.jsonl"
    lines = [
        {"patient_id": "keep", "visits": [
            {"diseases": ["D1"], "procedures": ["P1"], "medications": ["M1"]},
            {"diseases": ["D1"], "procedures": [], "medications": ["M1"]}]},
        {"patient_id": "gone", "visits": [[["D2"], ["P1"], []]]},
    ]
    path.write_text("\n".join(json.dumps(x) for x in lines) + "\n")
    recs, vocabs = load_records(path)
    assert [r.patient_id for r in recs] == ["keep"]
    assert len(recs[0].visits) == 1
    for r in recs:
        for visit in r.visits:
            assert visit.diseases and visit.procedures and visit.medications


def test_min_visits_filter(tmp_path):
    path = tmp_path / "r.jsonl"
    write_records(path, [PatientRecord("a", (Visit([0], [0], [0]),)),
                         PatientRecord("b", (Visit([0], [0], [0]), Visit([1], [1], [1])))], _vocabs())
    recs, _ = load_records(path, min_visits=2)
    assert [r.patient_id for r in recs] == ["b"]


def test_unknown_code_with_fixed_vocabulary(tmp_path):
    path = tmp_path / "r.jsonl"
    path.write_text(json.dumps({"patient_id": "a", "visits": [[["DX"], ["P0"], ["M0"]]]}) + "\n")
    with pytest.raises(UnknownCodeError) as info:
        load_records(path, _vocabs())
    assert info.value.line == 1


@pytest.mark.parametrize("text", ["not json", json.dumps([1, 2]), json.dumps({"patient_id": "a"}),
                                  json.dumps({"patient_id": "a", "visits": [[["D0"], ["P0"]]]})])
def test_malformed_record_lines(tmp_path, text):
    path = tmp_path / "r.jsonl"
    path.write_text(text + "\n")
    with pytest.raises(DataFormatError):
        load_records(path)


def test_missing_records_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_records(tmp_path / "nope.jsonl")


# -- DDI and molecules ---------------------------------------------------------


def test_ddi_matrix_invariants():
    d = DDIMatrix.from_pairs(4, [(0, 1), (2, 3)])
    assert np.array_equal(d.matrix, d.matrix.T)
    assert not np.diag(d.matrix).any()
    assert d.pairs() == [(0, 1), (2, 3)]
    with pytest.raises(ConfigError):
        DDIMatrix(np.array([[0, 1], [0, 0]]))
    with pytest.raises(ConfigError):
        DDIMatrix.from_pairs(3, [(1, 1)])


def test_load_ddi(tmp_path):
    v = _vocabs().medication
    path = tmp_path / "ddi.csv"
    path.write_text("med_a,med_b\nM0,M1\nM1,M3\nM0,MX\n")
    d = load_ddi(path, v)
    assert d.pairs() == [(0, 1), (1, 3)]
    assert d.n_skipped == 1
    with pytest.raises(UnknownCodeError):
        load_ddi(path, v, strict=True)
    path.write_text("M0,M0\n")
    with pytest.raises(DataFormatError):
        load_ddi(path, v)
    path.write_text("M0,M1,M2\n")
    with pytest.raises(DataFormatError):
        load_ddi(path, v)


def test_load_molecule_map_assigns_private_molecules(tmp_path):
    v = _vocabs().medication
    path = tmp_path / "mol.csv"
    path.write_text("medication,molecule\nM0,S1\nM1,S1\nM1,S2\n")
    mmap, mol_vocab = load_molecule_map(path, v)
    assert mmap.members[0] == (0,) and mmap.members[1] == (0, 1)
    # M2 and M3 get one private molecule each
    assert len(mol_vocab) == 4
    assert all(len(m) >= 1 for m in mmap.members)
    assert mmap.members[2] != mmap.members[3]


def test_molecule_map_validation():
    with pytest.raises(ConfigError):
        MoleculeMap(((0,), ()), 2)
    with pytest.raises(ConfigError):
        MoleculeMap(((0, 5),), 2)
    m = MoleculeMap(((0, 1), (1,)), 3)
    assert m.mask().tolist() == [[True, True, False], [False, True, False]]


# -- split and bootstrap -------------------------------------------------------


def test_split_sizes_and_partition():
    recs = _patients(600)
    tr, va, te = split_dataset(recs, seed=7)
    assert (len(tr), len(va), len(te)) == (400, 100, 100)
    ids = [r.patient_id for r in tr + va + te]
    assert sorted(ids) == sorted(r.patient_id for r in recs)
    assert len(set(ids)) == 600
    again = split_dataset(recs, seed=7)
    assert [r.patient_id for r in again[2]] == [r.patient_id for r in te]
    other = split_dataset(recs, seed=8)
    assert [r.patient_id for r in other[2]] != [r.patient_id for r in te]


def test_split_ratio_errors():
    with pytest.raises(ConfigError):
        split_dataset(_patients(10), ratios=(0.5, 0.3, 0.3))


def test_bootstrap_rounds():
    recs = _patients(100)
    rounds = bootstrap_rounds(recs, rounds=10, fraction=0.8, seed=1)
    assert len(rounds) == 10 and all(len(r) == 80 for r in rounds)
    assert any(len({p.patient_id for p in r}) < 80 for r in rounds)  # duplicates occur
    assert rounds == bootstrap_rounds(recs, rounds=10, fraction=0.8, seed=1)
    full = bootstrap_rounds(recs, rounds=1, fraction=1.0, seed=1, replace=False)[0]
    assert sorted(p.patient_id for p in full) == sorted(p.patient_id for p in recs)
    with pytest.raises(ConfigError):
        bootstrap_rounds([], rounds=1)
    with pytest.raises(ConfigError):
        bootstrap_rounds(recs, rounds=0)
