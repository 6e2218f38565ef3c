import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

import _acceptance
from medcausal.causal import estimate_causal_effects, greedy_equivalence_search, stratify
from medcausal.ehr import visit_matrix
from medcausal.model import CoarseRelations, build_patient_structure
from medcausal.synthetic import SyntheticSpec, generate_synthetic

settings.register_profile("medcausal", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("medcausal")

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus():
    spec = SyntheticSpec(n_diseases=8, n_procedures=4, n_medications=6, n_molecules=5,
                         n_patients=120, procedure_targets=2, seed=3)
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def small_mined(small_corpus):
    data = small_corpus
    graphs = {k: greedy_equivalence_search(visit_matrix(data.records, k, len(data.vocabs.of(k))),
                                           entity_kind=k)
              for k in ("disease", "procedure", "medication")}
    dm, pm = estimate_causal_effects(data.records, data.vocabs, graphs)
    relations = CoarseRelations.from_strata(stratify(dm), stratify(pm))
    return graphs, dm, pm, relations


@pytest.fixture(scope="session")
def small_structures(small_corpus, small_mined):
    graphs, _, _, relations = small_mined
    n_meds = len(small_corpus.vocabs.medication)
    return [build_patient_structure(r, relations, graphs, n_meds) for r in small_corpus.records]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance.RESULTS):
        ok, title, detail = _acceptance.RESULTS[number]
        terminalreporter.write_line(f"[criterion {number:2d}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
