"""Stateless tensor operations of the dual-granularity encoder.

All functions take explicit parameters so they can be checked in isolation
against hand arithmetic; :mod:`medcausal.model.network` wires them together.
"""
from __future__ import annotations

import logging
from typing import Callable

import torch

from ..errors import NumericError

logger = logging.getLogger(__name__)

Activation = Callable[[torch.Tensor], torch.Tensor]

ACTIVATIONS: dict[str, Activation] = {
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "identity": lambda x: x,
}


def _long(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=torch.long)


def embed(table: torch.Tensor, indices) -> torch.Tensor:
    """Row lookup; raises IndexError for an index outside the table."""
    idx = _long(indices).reshape(-1)
    if idx.numel() and (int(idx.min()) < 0 or int(idx.max()) >= table.shape[0]):
        raise IndexError(f"embedding index out of range for a table of {table.shape[0]} rows")
    return table[idx]


def compose_medication_embeddings(weights: torch.Tensor, mask: torch.Tensor,
                                  mol_vectors: torch.Tensor, meds=None) -> torch.Tensor:
    """h_m = sum_j a_mj h_{s_j}, restricted to the medication's own molecules.

    ``mask`` zeroes every (medication, molecule) pair outside the molecule map,
    so those weights neither contribute nor receive gradient.
    """
    a = weights * mask
    if meds is not None:
        a = a[_long(meds)]
    dead = (a.detach() == 0).all(dim=1)
    if bool(dead.any()):
        logger.warning("%d medications have all-zero molecule weights", int(dead.sum()))
    return a @ mol_vectors


def fine_propagate(h: torch.Tensor, src, dst, eps: torch.Tensor | float,
                   weight: torch.Tensor | None = None,
                   activation: Activation = torch.tanh) -> torch.Tensor:
    """One GIN layer: sigma(W((1 + eps) h_i + sum_{j in N(i)} h_j))."""
    agg = torch.zeros_like(h).index_add(0, _long(dst), h[_long(src)])
    pre = (1 + eps) * h + agg
    if weight is not None:
        pre = pre @ weight.T
    return activation(pre)


def relation_normalizer(dst, rel, n_nodes: int, kappa: torch.Tensor) -> torch.Tensor:
    """Per-edge 1/q with q_{rel,i} = |N_rel(i)| * exp(kappa_rel)."""
    dst, rel = _long(dst), _long(rel)
    n_rel = kappa.shape[0]
    key = dst * n_rel + rel
    counts = torch.bincount(key, minlength=n_nodes * n_rel).to(kappa.dtype)
    return torch.exp(-kappa[rel]) / counts[key]


def coarse_propagate(h: torch.Tensor, src, dst, rel, r, delta_w: torch.Tensor,
                     inv_q: torch.Tensor, self_weight: torch.Tensor | None = None,
                     activation: Activation = torch.tanh) -> torch.Tensor:
    """One weighted relational convolution layer.

    h'_i = sigma(sum_rel (1/q_{rel,i}) sum_{j in N_rel(i)} (r_e I + dW_rel) h_j  [+ S h_i]).

    ``r`` is the stratum relevance of each edge and ``delta_w`` stacks one
    matrix per relation type. Without ``self_weight`` a node with no edges
    is passed through as sigma(h_i).
    """
    src, dst, rel = _long(src), _long(dst), _long(rel)
    r = torch.as_tensor(r, dtype=h.dtype)
    out = torch.zeros_like(h)
    if src.numel():
        hs = h[src]
        msg = r[:, None] * hs + torch.einsum("eij,ej->ei", delta_w[rel], hs)
        out = out.index_add(0, dst, inv_q[:, None] * msg)
    if self_weight is not None:
        out = out + h @ self_weight.T
    else:
        isolated = torch.ones(h.shape[0], dtype=torch.bool)
        isolated[dst] = False
        out = torch.where(isolated[:, None], h, out)
    return activation(out)


def segment_softmax(logits: torch.Tensor, owner, n_owners: int) -> torch.Tensor:
    owner = _long(owner)
    shift = torch.full((n_owners,), float("-inf"), dtype=logits.dtype)
    shift = shift.scatter_reduce(0, owner, logits.detach(), reduce="amax")
    e = torch.exp(logits - shift[owner])
    total = torch.zeros(n_owners, dtype=logits.dtype).index_add(0, owner, e)
    return e / total[owner]


def dac_aggregate_segments(h: torch.Tensor, group, group_owner, n_owners: int,
                           w: torch.Tensor, b: torch.Tensor, group_w=None):
    """Vectorised DAC over many (visit, kind) slots at once.

    ``group`` gives each entity's category group and ``group_owner`` the slot
    each group belongs to. Returns per-slot vectors (zero for an empty slot)
    and the per-group softmax weights.
    """
    group, group_owner = _long(group), _long(group_owner)
    n_groups = group_owner.shape[0]
    sums = torch.zeros(n_groups, h.shape[1], dtype=h.dtype).index_add(0, group, h)
    sizes = torch.bincount(group, minlength=n_groups).to(h.dtype)
    means = sums / sizes[:, None]
    wg = w if group_w is None else w[_long(group_w)]
    logits = (means * wg).sum(dim=1) + (b if group_w is None else b[_long(group_w)])
    weights = segment_softmax(logits, group_owner, n_owners)
    slot_of_entity = group_owner[group]
    out = torch.zeros(n_owners, h.shape[1], dtype=h.dtype).index_add(
        0, slot_of_entity, weights[group][:, None] * h)
    return out, weights


def dac_aggregate(h: torch.Tensor, categories, w: torch.Tensor, b: torch.Tensor):
    """DAC for one visit and one entity kind.

    ``categories`` holds each entity's category id (0..3). Category vectors
    are member means; the softmax of w.h + b runs over non-empty categories
    and every member is scaled by its category weight before summing.
    Returns (h_kind, {category id: weight}).
    """
    cats = _long(categories)
    if cats.numel() == 0:
        raise ValueError("DAC needs at least one entity")
    present, group = torch.unique(cats, return_inverse=True)
    out, weights = dac_aggregate_segments(h, group, torch.zeros(len(present), dtype=torch.long), 1, w, b)
    return out[0], {int(c): weights[i] for i, c in enumerate(present.tolist())}


def build_visit_repr(h_d: torch.Tensor, h_p: torch.Tensor, h_m: torch.Tensor | None) -> torch.Tensor:
    """[h_D || h_P || h_M]; ``h_m=None`` marks a first visit and becomes zeros."""
    if h_m is None:
        h_m = torch.zeros_like(h_d)
    if not (h_d.shape[-1] == h_p.shape[-1] == h_m.shape[-1]):
        raise ValueError("visit components must share one dimension")
    return torch.cat([h_d, h_p, h_m], dim=-1)


def predict_probabilities(h: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    logits = h @ weight.T + bias
    if not bool(torch.isfinite(logits).all()):
        raise NumericError("non-finite logits in the output head")
    return torch.sigmoid(logits)
