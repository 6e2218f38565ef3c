import itertools

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

import oracles
from medcausal.errors import ConfigError
from medcausal.losses import (LossConfig, alpha_schedule, combined_loss, loss_bce, loss_ddi, loss_multi,
                              set_ddi_rate)
from medcausal.metrics import (HEADERS, METRICS, MetricReport, PatientPrediction, avg_med, ddi_rate,
                               ddi_rate_label_denominator, evaluate_predictions, f1, jaccard, prauc)
from medcausal.training import bootstrap_report


def _instance(rng, n):
    y = (rng.random(n) < 0.4).astype(float)
    p = rng.random(n)
    m = np.triu((rng.random((n, n)) < 0.3).astype(int), 1)
    return y, p, m + m.T


# -- losses --------------------------------------------------------------------


def test_losses_against_loop_oracles(rng):
    for _ in range(30):
        y, p, m = _instance(rng, int(rng.integers(2, 15)))
        assert float(loss_bce(y, p)) == pytest.approx(oracles.bce(y, p), abs=1e-9)
        assert float(loss_multi(y, p)) == pytest.approx(oracles.multi_margin(y, p), abs=1e-9)
        assert float(loss_ddi(p, m)) == pytest.approx(oracles.ddi_penalty(p, m), abs=1e-9)


def test_loss_edge_cases():
    assert float(loss_multi([1, 1], [0.2, 0.3])) == 0.0
    assert float(loss_multi([0, 0], [0.2, 0.3])) == 0.0
    # perfect separation by a margin of one has no multi-label loss
    assert float(loss_multi([1, 0], [1.0, 0.0])) == 0.0
    assert np.isfinite(float(loss_bce([1, 0], [0.0, 1.0])))


def test_alpha_schedule_shape():
    assert alpha_schedule(0.0) == 1.0
    assert alpha_schedule(0.06) == 1.0
    assert alpha_schedule(0.11) == pytest.approx(0.0, abs=1e-12)
    assert alpha_schedule(0.5) == 0.0
    xs = np.linspace(0, 0.2, 401)
    vals = [alpha_schedule(x) for x in xs]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    assert alpha_schedule(0.06 + 1e-12) == pytest.approx(1.0, abs=1e-9)


def test_set_ddi_rate():
    m = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]])
    assert set_ddi_rate({0, 1, 2}, m) == pytest.approx(2 / 3)
    assert set_ddi_rate({0}, m) == 0.0


def test_combined_loss_mixing():
    y = np.array([1.0, 0.0, 1.0])
    p = torch.tensor([0.9, 0.8, 0.7], dtype=torch.float64)
    m = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    cfg = LossConfig()
    total, parts = combined_loss(y, p, m, alpha=1.0, config=cfg)
    assert float(total) == pytest.approx(0.95 * parts["bce"] + 0.05 * parts["multi"])
    total, parts = combined_loss(y, p, m, alpha=0.0, config=cfg)
    assert float(total) == pytest.approx(parts["ddi"])
    # all three predicted, one interacting pair out of three: alpha clamps to 0
    _, parts = combined_loss(y, p, m, config=cfg)
    assert parts["alpha"] == 0.0
    _, parts = combined_loss(y, p, m, rate_ddi=0.085, config=cfg)
    assert parts["alpha"] == pytest.approx(0.5)


def test_loss_config_validation():
    for bad in (LossConfig(beta=1.5), LossConfig(gamma=-0.1), LossConfig(kp=0.0)):
        with pytest.raises(ConfigError):
            bad.validate()


def test_loss_gradients_flow():
    p = torch.tensor([0.3, 0.6], dtype=torch.float64, requires_grad=True)
    total, _ = combined_loss([1.0, 0.0], p, np.array([[0, 1], [1, 0]]), alpha=0.5)
    total.backward()
    assert torch.all(torch.isfinite(p.grad)) and p.grad.abs().sum() > 0


# -- metrics -------------------------------------------------------------------


def test_metric_examples():
    assert jaccard({0, 1}, {1, 2}) == pytest.approx(1 / 3)
    assert jaccard(set(), set()) == 0.0
    assert f1({0, 1}, {1}) == pytest.approx(2 / 3)
    assert f1({0}, set()) == 0.0
    assert prauc({0}, [0.9, 0.1]) == 1.0
    assert prauc({1}, [0.9, 0.1]) == 0.5
    # equal scores: lower index ranks first
    assert prauc({1}, [0.5, 0.5]) == 0.5
    assert avg_med([{0, 1}, {2}]) == 1.5


def test_metrics_against_brute_force(rng):
    for _ in range(50):
        n = int(rng.integers(2, 9))
        truth = set(np.flatnonzero(rng.random(n) < 0.5).tolist()) or {0}
        pred = set(np.flatnonzero(rng.random(n) < 0.5).tolist())
        scores = np.round(rng.random(n), 1)
        m = np.triu((rng.random((n, n)) < 0.4).astype(int), 1)
        m = m + m.T
        assert jaccard(truth, pred) == pytest.approx(oracles.jaccard(truth, pred), abs=1e-9)
        assert f1(truth, pred) == pytest.approx(oracles.f1(truth, pred), abs=1e-9)
        assert prauc(truth, scores) == pytest.approx(oracles.prauc(truth, list(scores)), abs=1e-9)
        assert ddi_rate([pred, truth], m) == pytest.approx(oracles.ddi_rate([pred, truth], m), abs=1e-9)


set_of = st.sets(st.integers(0, 7), max_size=8)


@given(set_of, set_of, st.lists(st.floats(0, 1), min_size=8, max_size=8))
def test_metric_bounds(truth, pred, scores):
    for v in (jaccard(truth, pred), f1(truth, pred), prauc(truth, scores)):
        assert 0.0 <= v <= 1.0 + 1e-12
    m = np.ones((8, 8), dtype=int) - np.eye(8, dtype=int)
    assert 0.0 <= ddi_rate([pred], m) <= 1.0
    assert avg_med([pred]) >= 0


def test_label_denominator_variant():
    m = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    sel, truth = [{0, 1}], [{0, 1, 2}]
    assert ddi_rate(sel, m) == 1.0
    assert ddi_rate_label_denominator(sel, truth, m) == pytest.approx(1 / 3)


def _predictions(rng, n_patients=40, n_meds=8):
    out = []
    for i in range(n_patients):
        k = int(rng.integers(1, 4))
        truth = [frozenset(np.flatnonzero(rng.random(n_meds) < 0.4).tolist()) for _ in range(k)]
        scores = [rng.random(n_meds) for _ in range(k)]
        sel = [frozenset(np.flatnonzero(s >= 0.5).tolist()) for s in scores]
        out.append(PatientPrediction(f"p{i}", truth, scores, sel))
    return out


def test_patient_level_averaging():
    p1 = PatientPrediction("a", [frozenset({0}), frozenset({0})], [np.array([1.0, 0.0])] * 2,
                           [frozenset({0}), frozenset({1})])
    p2 = PatientPrediction("b", [frozenset({1})], [np.array([0.0, 1.0])], [frozenset({1})])
    res = evaluate_predictions([p1, p2], np.zeros((2, 2), int))
    # patient a averages 1 and 0, then patients average 0.5 and 1
    assert res["jaccard"] == pytest.approx(0.75)
    assert res["avg_med"] == 1.0


def test_degenerate_bootstrap_equals_direct(rng):
    preds = _predictions(rng)
    m = np.zeros((8, 8), int)
    m[0, 1] = m[1, 0] = 1
    direct = evaluate_predictions(preds, m)
    rep = bootstrap_report(preds, m, rounds=1, fraction=1.0, seed=0, replace=False)
    for k in METRICS:
        assert rep.rounds[0][k] == pytest.approx(direct[k], abs=1e-12)


def test_stderr_shrinks_with_more_rounds(rng):
    preds = _predictions(rng, 60)
    m = np.zeros((8, 8), int)
    few = bootstrap_report(preds, m, rounds=5, seed=3)
    many = bootstrap_report(preds, m, rounds=50, seed=3)
    assert many.stderr("jaccard") < few.stderr("jaccard")


def test_report_layout(tmp_path, rng):
    rep = bootstrap_report(_predictions(rng), np.zeros((8, 8), int), rounds=3)
    rep.write_csv(tmp_path / "r.csv", label="model")
    lines = [ln for ln in (tmp_path / "r.csv").read_text().splitlines() if not ln.startswith("#")]
    assert lines[0].split(",")[:6] == ["row", "Jaccard", "DDI", "F1", "PRAUC", "Avg.#Med"]
    assert lines[1].startswith("model,") and "±" in lines[1]
    assert len(lines) == 2 + 3
    assert [HEADERS[k] for k in METRICS] == ["Jaccard", "DDI", "F1", "PRAUC", "Avg.#Med"]
    assert MetricReport([{"jaccard": 0.5}]).stderr("jaccard") == 0.0
