"""Training objective: BCE + multi-label margin, traded against a DDI penalty."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import torch

from .errors import ConfigError

CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    beta: float = 0.95
    gamma: float = 0.06
    kp: float = 0.05

    def validate(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError("beta must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.kp <= 0:
            raise ConfigError("kp must be positive")


def _t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x), dtype=torch.float64)


def loss_bce(truth, pred) -> torch.Tensor:
    """Summed binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7]."""
    y, p = _t(truth), _t(pred).clamp(CLAMP, 1 - CLAMP)
    return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).sum()


def loss_multi(truth, pred) -> torch.Tensor:
    """Sum over (positive i, negative j) of max(0, 1 - (p_i - p_j)), divided by |M|."""
    y, p = _t(truth), _t(pred)
    pos = y > 0.5
    if not bool(pos.any()) or bool(pos.all()):
        return p.sum() * 0.0
    gaps = 1.0 - (p[pos][:, None] - p[~pos][None, :])
    return torch.clamp(gaps, min=0.0).sum() / p.shape[-1]


def loss_ddi(pred, ddi) -> torch.Tensor:
    """sum_ij M_ij p_i p_j over ordered pairs, so each interacting pair counts twice."""
    p = _t(pred)
    m = torch.tensor(np.asarray(getattr(ddi, "matrix", ddi)), dtype=p.dtype)
    return p @ m @ p


def alpha_schedule(rate_ddi: float, gamma: float = 0.06, kp: float = 0.05) -> float:
    """1 up to the acceptance rate gamma, then linear down to 0 at gamma + kp.

    Evaluated in exact rational arithmetic on the shortest decimal form of
    each input and rounded once, so alpha(0.085) with the defaults is exactly 0.5.
    """
    rate, g, k = (Fraction(repr(float(x))) for x in (rate_ddi, gamma, kp))
    if rate <= g:
        return 1.0
    return float(max(Fraction(0), 1 - (rate - g) / k))


def set_ddi_rate(selected, ddi) -> float:
    """Interacting pairs / all pairs within one medication set (0 for fewer than 2)."""
    idx = np.asarray(sorted(selected), dtype=np.int64)
    if len(idx) < 2:
        return 0.0
    m = np.asarray(getattr(ddi, "matrix", ddi))[np.ix_(idx, idx)]
    return float(np.triu(m, 1).sum()) / (len(idx) * (len(idx) - 1) / 2)


def combined_loss(truth, pred, ddi, rate_ddi: float | None = None,
                  config: LossConfig = LossConfig(), alpha: float | None = None):
    """alpha (beta BCE + (1 - beta) multi) + (1 - alpha) DDI.

    Without an explicit ``rate_ddi`` the rate is that of ``pred`` thresholded
    at 0.5. ``alpha`` overrides the schedule. Returns (loss, parts dict).
    """
    p = _t(pred)
    if alpha is None:
        if rate_ddi is None:
            rate_ddi = set_ddi_rate(np.flatnonzero(p.detach().numpy() >= 0.5), ddi)
        alpha = alpha_schedule(rate_ddi, config.gamma, config.kp)
    bce, multi, dd = loss_bce(truth, p), loss_multi(truth, p), loss_ddi(p, ddi)
    total = alpha * (config.beta * bce + (1 - config.beta) * multi) + (1 - alpha) * dd
    parts = {"bce": float(bce.detach()), "multi": float(multi.detach()), "ddi": float(dd.detach()),
             "alpha": float(alpha)}
    return total, parts
