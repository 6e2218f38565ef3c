"""Training loop, prediction with optional correction, bootstrap evaluation, baseline."""
from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .correction import CorrectionConfig, correct, visit_effects
from .ehr import DDIMatrix, PatientRecord, bootstrap_rounds
from .errors import ConfigError, NumericError
from .losses import LossConfig, combined_loss
from .metrics import MetricReport, PatientPrediction, evaluate_predictions
from .model.network import DualGranularityModel
from .model.structure import PatientStructure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 5e-4
    weight_decay: float = 0.05
    seed: int = 0
    correct_in_loss: bool = False

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be at least 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")


@dataclass
class TrainResult:
    best_state: dict
    best_epoch: int
    best_val_jaccard: float
    history: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def effect_rows(s: PatientStructure, effects_dm, effects_pm) -> np.ndarray:
    """Per-visit maximum relevant effect of every medication (visits x meds)."""
    return np.stack([visit_effects(d, p, effects_dm, effects_pm)
                     for d, p in zip(s.visit_diseases, s.visit_procedures)])


def _correction_shift(effects: np.ndarray, cfg: CorrectionConfig) -> np.ndarray:
    return np.where(effects >= cfg.delta1, cfg.tau1, 0.0) - np.where(effects < cfg.delta2, cfg.tau2, 0.0)


def patient_loss(probs: torch.Tensor, s: PatientStructure, ddi: DDIMatrix, loss_cfg: LossConfig,
                 shift: np.ndarray | None = None):
    """Summed combined loss over a patient's visits, and the mean of its parts."""
    if shift is not None:
        probs = torch.clamp(probs + torch.as_tensor(shift), 0.0, 1.0)
    total = probs.new_zeros(())
    parts = {"bce": 0.0, "multi": 0.0, "ddi": 0.0, "alpha": 0.0}
    for t in range(s.n_visits):
        loss, p = combined_loss(s.targets[t], probs[t], ddi, config=loss_cfg)
        total = total + loss
        for k in parts:
            parts[k] += p[k] / s.n_visits
    return total, parts


def train(model: DualGranularityModel, train_set: Sequence[PatientStructure],
          val_set: Sequence[PatientStructure], ddi: DDIMatrix,
          loss_cfg: LossConfig = LossConfig(), train_cfg: TrainConfig = TrainConfig(),
          effects: tuple | None = None, correction: CorrectionConfig = CorrectionConfig(),
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """One optimizer step per patient; keeps the parameters with the best validation Jaccard.

    Validation selection uses uncorrected probabilities so the trained model
    does not depend on the correction settings. ``effects`` is only needed
    when ``train_cfg.correct_in_loss`` is set.
    """
    loss_cfg.validate()
    train_cfg.validate()
    if not train_set:
        raise ConfigError("empty training set")
    shifts = None
    if train_cfg.correct_in_loss:
        if effects is None:
            raise ConfigError("correct_in_loss needs the effect matrices")
        shifts = [_correction_shift(effect_rows(s, *effects), correction) for s in train_set]
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    rng = np.random.default_rng(train_cfg.seed)
    best = TrainResult(copy.deepcopy(model.state_dict()), 0, -math.inf)
    start = time.perf_counter()
    for epoch in range(1, train_cfg.epochs + 1):
        model.train()
        sums = {"loss": 0.0, "bce": 0.0, "multi": 0.0, "ddi": 0.0, "alpha": 0.0}
        for i in rng.permutation(len(train_set)):
            s = train_set[i]
            probs = model(s)
            loss, parts = patient_loss(probs, s, ddi, loss_cfg, None if shifts is None else shifts[i])
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite loss on patient {s.patient_id} in epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["loss"] += float(loss.detach())
            for k, v in parts.items():
                sums[k] += v
        n = len(train_set)
        row = {"epoch": epoch, "steps": epoch * n, **{k: v / n for k, v in sums.items()}}
        if val_set:
            val = evaluate_predictions(predict(model, val_set), ddi)
            row.update({f"val_{k}": v for k, v in val.items()})
            score = val["jaccard"]
        else:
            score = -row["loss"]
        if score > best.best_val_jaccard:
            best.best_state = copy.deepcopy(model.state_dict())
            best.best_epoch = epoch
            best.best_val_jaccard = score
        best.history.append(row)
        logger.info("epoch %d loss %.4f val jaccard %s", epoch, row["loss"], row.get("val_jaccard"))
        if on_epoch is not None:
            on_epoch(row)
    best.seconds = time.perf_counter() - start
    model.load_state_dict(best.best_state)
    return best


def predict(model: DualGranularityModel, structs: Sequence[PatientStructure], effects: tuple | None = None,
            correction: CorrectionConfig = CorrectionConfig(), audit: list | None = None
            ) -> list[PatientPrediction]:
    """Probabilities, optionally corrected, and selected sets for every patient.

    With ``effects=None`` the raw probabilities are thresholded directly.
    ``audit`` collects (patient_id, visit, RecommendationResult) tuples.
    """
    out = []
    for s in structs:
        probs = model.predict(s)
        scores, sets = [], []
        for t in range(s.n_visits):
            if effects is None:
                sc = probs[t]
                sel = frozenset(np.flatnonzero(sc >= correction.threshold).tolist())
            else:
                e = visit_effects(s.visit_diseases[t], s.visit_procedures[t], *effects)
                res = correct(probs[t], e, correction)
                sc, sel = res.corrected, res.selected
                if audit is not None:
                    audit.append((s.patient_id, t, res))
            scores.append(sc)
            sets.append(sel)
        truth = [frozenset(np.flatnonzero(row).tolist()) for row in s.targets]
        out.append(PatientPrediction(s.patient_id, truth, scores, sets))
    return out


def bootstrap_report(preds: Sequence[PatientPrediction], ddi: DDIMatrix, rounds: int = 10,
                     fraction: float = 0.8, seed: int = 0, replace: bool = True) -> MetricReport:
    """Metrics on ``rounds`` resamples of the patient predictions (mean and standard error)."""
    samples = bootstrap_rounds(list(preds), rounds=rounds, fraction=fraction, seed=seed, replace=replace)
    report = MetricReport([evaluate_predictions(sample, ddi) for sample in samples])
    report.meta.update({"rounds": rounds, "fraction": fraction, "seed": seed, "replace": replace})
    return report


def evaluate_bootstrap(model: DualGranularityModel, structs: Sequence[PatientStructure], ddi: DDIMatrix,
                       effects: tuple | None = None, correction: CorrectionConfig = CorrectionConfig(),
                       rounds: int = 10, fraction: float = 0.8, seed: int = 0,
                       replace: bool = True) -> MetricReport:
    return bootstrap_report(predict(model, structs, effects, correction), ddi, rounds, fraction, seed, replace)


def frequency_baseline(train_records: Sequence[PatientRecord], test_records: Sequence[PatientRecord],
                       n_meds: int) -> list[PatientPrediction]:
    """Recommend the k most frequent training medications at every visit.

    k is the rounded mean prescription size of the training visits; scores are
    the training frequencies, so PRAUC ranks by popularity.
    """
    counts = np.zeros(n_meds)
    n_visits = 0
    sizes = []
    for rec in train_records:
        for v in rec.visits:
            counts[list(v.medications)] += 1
            sizes.append(len(v.medications))
            n_visits += 1
    freq = counts / max(n_visits, 1)
    k = int(round(float(np.mean(sizes)))) if sizes else 0
    top = frozenset(np.lexsort((np.arange(n_meds), -counts))[:k].tolist())
    out = []
    for rec in test_records:
        truth = [frozenset(v.medications) for v in rec.visits]
        out.append(PatientPrediction(rec.patient_id, truth, [freq] * len(truth), [top] * len(truth)))
    return out
