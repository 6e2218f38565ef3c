"""Disease/procedure -> medication causal effects from per-medication logistic GLMs.

For every medication a logit-link GLM is fitted on visit-level indicator
covariates of the diseases and procedures that co-occur with it at least
``min_support`` times. Parents of those candidates in the mined causal graphs
are added as adjustment covariates, which closes the back-door path through a
parent disease. The effect of a source on the medication is the fitted
response probability with only that source active, ``expit(b0 + b_source)``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from ..ehr import PatientRecord, Vocabularies, Vocabulary, visit_matrix
from ..errors import DataFormatError
from .graph import CausalGraph

logger = logging.getLogger(__name__)

EPS = 1e-4


@dataclass(frozen=True)
class CausalEffectMatrix:
    """Effects of one source kind on every medication (sources x medications)."""

    source_kind: str
    values: np.ndarray
    intercepts: np.ndarray | None = None
    coefficients: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("effect values must be a matrix")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("effects must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass
class LogisticFit:
    coef: np.ndarray
    converged: bool
    n_iter: int


def fit_logistic(X: np.ndarray, y: np.ndarray, l2: float = 1.0, max_iter: int = 100,
                 tol: float = 1e-8) -> LogisticFit:
    """Newton-Raphson (IRLS) for a logit GLM with an intercept column prepended.

    ``l2`` is a ridge penalty on the slopes only; the intercept is free.
    Returned ``coef[0]`` is the intercept.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    Z = np.hstack([np.ones((X.shape[0], 1)), X])
    pen = np.full(Z.shape[1], float(l2))
    pen[0] = 0.0
    beta = np.zeros(Z.shape[1])
    p = y.mean() if len(y) else 0.5
    beta[0] = np.log(np.clip(p, EPS, 1 - EPS) / (1 - np.clip(p, EPS, 1 - EPS)))
    def objective(b):
        eta = Z @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(pen * b * b))

    current = objective(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(Z @ beta)
        w = mu * (1 - mu)
        grad = Z.T @ (y - mu) - pen * beta
        hess = (Z * w[:, None]).T @ Z + np.diag(pen) + 1e-10 * np.eye(Z.shape[1])
        step = np.linalg.solve(hess, grad)
        # step halving keeps the penalised log-likelihood monotone
        scale = 1.0
        while scale > 1e-10:
            trial = beta + scale * step
            value = objective(trial)
            if value >= current - 1e-12:
                break
            scale *= 0.5
        beta, current = trial, value
        if np.max(np.abs(scale * step)) < tol:
            converged = True
            break
    return LogisticFit(beta, converged, it)


def _candidates(co_counts: np.ndarray, med: int, min_support: int) -> list[int]:
    return np.flatnonzero(co_counts[:, med] >= min_support).tolist()


def _with_parents(cands: list[int], graph: CausalGraph | None) -> list[int]:
    if graph is None:
        return list(cands)
    extra = set()
    for c in cands:
        extra |= graph.parents(c)
    return sorted(set(cands) | extra)


def estimate_causal_effects(
    records: Sequence[PatientRecord],
    vocabs: Vocabularies,
    graphs: dict[str, CausalGraph] | None = None,
    *,
    min_support: int = 5,
    l2: float = 0.3,
    eps: float = EPS,
) -> tuple[CausalEffectMatrix, CausalEffectMatrix]:
    graphs = graphs or {}
    Xd = visit_matrix(records, "disease", len(vocabs.disease)).astype(np.float64)
    Xp = visit_matrix(records, "procedure", len(vocabs.procedure)).astype(np.float64)
    Y = visit_matrix(records, "medication", len(vocabs.medication)).astype(np.float64)
    n_med = Y.shape[1]
    co_d, co_p = Xd.T @ Y, Xp.T @ Y

    eff_d = np.zeros((Xd.shape[1], n_med))
    eff_p = np.zeros((Xp.shape[1], n_med))
    coef_d = np.zeros_like(eff_d)
    coef_p = np.zeros_like(eff_p)
    intercepts = np.zeros(n_med)
    for m in range(n_med):
        cand_d = _candidates(co_d, m, min_support)
        cand_p = _candidates(co_p, m, min_support)
        if not cand_d and not cand_p:
            continue
        cov_d = _with_parents(cand_d, graphs.get("disease"))
        cov_p = _with_parents(cand_p, graphs.get("procedure"))
        X = np.hstack([Xd[:, cov_d], Xp[:, cov_p]])
        fit = fit_logistic(X, Y[:, m], l2=l2)
        b0, slopes = fit.coef[0], fit.coef[1:]
        bd, bp = slopes[:len(cov_d)], slopes[len(cov_d):]
        intercepts[m] = b0
        coef_d[cov_d, m] = bd
        coef_p[cov_p, m] = bp
        pos_d = {c: i for i, c in enumerate(cov_d)}
        pos_p = {c: i for i, c in enumerate(cov_p)}
        ed = expit(b0 + np.array([bd[pos_d[c]] for c in cand_d]))
        ep = expit(b0 + np.array([bp[pos_p[c]] for c in cand_p]))
        degenerate = (not fit.converged) or np.max(np.abs(fit.coef)) > 20.0
        if degenerate:
            logger.warning("degenerate GLM fit for medication %s; clamping effects",
                           vocabs.medication.codes[m])
        # a candidate always has a nonzero effect, which keeps "0 == never co-occurs" exact
        eff_d[cand_d, m] = np.clip(ed, eps, 1 - eps) if degenerate else np.maximum(ed, eps)
        eff_p[cand_p, m] = np.clip(ep, eps, 1 - eps) if degenerate else np.maximum(ep, eps)
    return (CausalEffectMatrix("disease", eff_d, intercepts, coef_d),
            CausalEffectMatrix("procedure", eff_p, intercepts, coef_p))


def cooccurrence_effects(records: Sequence[PatientRecord], vocabs: Vocabularies
                         ) -> tuple[CausalEffectMatrix, CausalEffectMatrix]:
    """Co-occurrence rates P(medication | source) in the same layout as causal effects."""
    Y = visit_matrix(records, "medication", len(vocabs.medication)).astype(np.float64)
    out = []
    for kind in ("disease", "procedure"):
        X = visit_matrix(records, kind, len(vocabs.of(kind))).astype(np.float64)
        rate = (X.T @ Y) / np.maximum(X.sum(axis=0), 1.0)[:, None]
        out.append(CausalEffectMatrix(kind, np.clip(rate, 0.0, 1.0)))
    return out[0], out[1]


def write_effects(path: str | Path, effects: CausalEffectMatrix, src_vocab: Vocabulary,
                  med_vocab: Vocabulary) -> None:
    """Nonzero entries as CSV plus the dense matrix in a ``.npy`` sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "medication", "effect"])
        for i, j in zip(*np.nonzero(effects.values)):
            w.writerow([src_vocab.codes[i], med_vocab.codes[j], repr(float(effects.values[i, j]))])
    np.save(path.with_suffix(".npy"), effects.values)


def read_effects(path: str | Path, kind: str, src_vocab: Vocabulary, med_vocab: Vocabulary
                 ) -> CausalEffectMatrix:
    path = Path(path)
    values = np.zeros((len(src_vocab), len(med_vocab)))
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if lineno == 1 and row == ["source", "medication", "effect"]:
                continue
            if len(row) != 3:
                raise DataFormatError("expected 3 columns", path, lineno)
            values[src_vocab.lookup(row[0]), med_vocab.lookup(row[1])] = float(row[2])
    sidecar = path.with_suffix(".npy")
    if sidecar.exists():
        dense = np.load(sidecar)
        if dense.shape != values.shape or not np.array_equal(dense, values):
            raise DataFormatError("effect CSV and binary sidecar disagree", path)
    return CausalEffectMatrix(kind, values)
