"""Dual-granularity patient encoder and medication probability head."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..ehr import MoleculeMap
from ..errors import ConfigError
from . import ops
from .structure import DISEASE, MEDICATION, PROCEDURE, PatientStructure, fine_edges


@dataclass(frozen=True)
class ModelConfig:
    n_diseases: int
    n_procedures: int
    n_medications: int
    n_molecules: int
    dim: int = 64
    n_relations: int = 5
    gin_layers: int = 1
    rgcn_layers: int = 2
    fusion_cycles: int = 1
    mlp_hidden: int = 0          # 0 means "same as dim"
    dropout: float = 0.5
    activation: str = "tanh"
    self_loop: bool = True
    use_molecules: bool = True   # False is the free-embedding ablation
    init_scale: float = 0.1

    def validate(self) -> None:
        if self.dim < 1 or self.n_relations < 1 or self.rgcn_layers < 1 or self.gin_layers < 0:
            raise ConfigError("model sizes must be positive")
        if self.fusion_cycles < 1:
            raise ConfigError("fusion_cycles must be at least 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.activation not in ops.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class DualGranularityModel(nn.Module):
    """Molecule GIN + relational entity convolution + DAC + GRU + MLP head.

    ``forward`` maps one patient's :class:`PatientStructure` to a
    (visits x medications) matrix of probabilities; row t predicts the
    prescription of visit t from visits 1..t.
    """

    def __init__(self, config: ModelConfig, molecules: MoleculeMap | None = None):
        super().__init__()
        config.validate()
        self.config = config
        c = config
        dt = torch.float64
        g = c.init_scale
        self.act = ops.ACTIVATIONS[c.activation]
        self.E_d = nn.Parameter(torch.randn(c.n_diseases, c.dim, dtype=dt) * g)
        self.E_p = nn.Parameter(torch.randn(c.n_procedures, c.dim, dtype=dt) * g)
        if c.use_molecules:
            if molecules is None:
                raise ConfigError("the molecule map is required unless use_molecules is off")
            if len(molecules) != c.n_medications or molecules.n_molecules != c.n_molecules:
                raise ConfigError("molecule map does not match the configured sizes")
            mask = torch.as_tensor(molecules.mask(), dtype=dt)
            self.register_buffer("mol_mask", mask, persistent=False)
            self.E_s = nn.Parameter(torch.randn(c.n_molecules, c.dim, dtype=dt) * g)
            self.A = nn.Parameter(mask / mask.sum(dim=1, keepdim=True))
            src, dst = fine_edges(molecules)
            self.register_buffer("fine_src", torch.as_tensor(src), persistent=False)
            self.register_buffer("fine_dst", torch.as_tensor(dst), persistent=False)
            self.gin_eps = nn.Parameter(torch.zeros(c.gin_layers, dtype=dt))
            self.gin_w = nn.Parameter(torch.eye(c.dim, dtype=dt).repeat(c.gin_layers, 1, 1))
        else:
            self.E_m = nn.Parameter(torch.randn(c.n_medications, c.dim, dtype=dt) * g)
        L, R = c.rgcn_layers, c.n_relations
        self.delta_w = nn.Parameter(torch.randn(L, R, c.dim, c.dim, dtype=dt) * (g / c.dim ** 0.5))
        self.kappa = nn.Parameter(torch.zeros(L, R, dtype=dt))
        if c.self_loop:
            self.self_w = nn.Parameter(torch.eye(c.dim, dtype=dt).repeat(L, 1, 1))
        self.dac_w = nn.Parameter(torch.randn(3, c.dim, dtype=dt) * g)
        self.dac_b = nn.Parameter(torch.zeros(3, dtype=dt))
        hidden = c.mlp_hidden or c.dim
        self.gru = nn.GRU(3 * c.dim, c.dim, batch_first=True, dtype=dt)
        self.mlp = nn.Sequential(nn.Linear(c.dim, hidden, dtype=dt), nn.Sigmoid(), nn.Dropout(c.dropout))
        self.head = nn.Linear(hidden, c.n_medications, dtype=dt)

    # -- granular pieces -----------------------------------------------------
    def molecule_vectors(self, h_s: torch.Tensor | None = None) -> torch.Tensor:
        h = self.E_s if h_s is None else h_s
        for layer in range(self.config.gin_layers):
            h = ops.fine_propagate(h, self.fine_src, self.fine_dst, self.gin_eps[layer],
                                   self.gin_w[layer], self.act)
        return h

    def medication_vectors(self, h_s: torch.Tensor | None = None) -> torch.Tensor:
        if not self.config.use_molecules:
            return self.E_m
        return ops.compose_medication_embeddings(self.A, self.mol_mask, self.molecule_vectors(h_s))

    def entity_vectors(self, s: PatientStructure, med_vectors: torch.Tensor) -> torch.Tensor:
        kind = torch.as_tensor(s.node_kind)
        idx = torch.as_tensor(s.node_index)
        h = torch.zeros(s.n_nodes, self.config.dim, dtype=torch.float64)
        for k, table in ((DISEASE, self.E_d), (PROCEDURE, self.E_p), (MEDICATION, med_vectors)):
            sel = torch.nonzero(kind == k).reshape(-1)
            if sel.numel():
                h = h.index_copy(0, sel, table[idx[sel]])
        return h

    def coarse(self, s: PatientStructure, h: torch.Tensor) -> torch.Tensor:
        for layer in range(self.config.rgcn_layers):
            inv_q = ops.relation_normalizer(s.edge_dst, s.edge_rel, s.n_nodes, self.kappa[layer])
            self_w = self.self_w[layer] if self.config.self_loop else None
            h = ops.coarse_propagate(h, s.edge_src, s.edge_dst, s.edge_rel, s.edge_r,
                                     self.delta_w[layer], inv_q, self_w, self.act)
        return h

    def fuse(self, s: PatientStructure) -> torch.Tensor:
        """Entity vectors after ``fusion_cycles`` rounds of fine then coarse propagation."""
        h_s = None
        h = None
        for _ in range(self.config.fusion_cycles):
            if self.config.use_molecules:
                h_s = self.molecule_vectors(h_s)
                meds = ops.compose_medication_embeddings(self.A, self.mol_mask, h_s)
            else:
                meds = self.E_m
            fresh = self.entity_vectors(s, meds)
            if h is not None:
                # carry entity state between cycles; medication rows are recomposed
                is_med = torch.as_tensor(s.node_kind == MEDICATION)[:, None]
                fresh = torch.where(is_med, fresh, h)
            h = self.coarse(s, fresh)
        return h

    def visit_representations(self, s: PatientStructure, h: torch.Tensor) -> torch.Tensor:
        n_slots = 3 * s.n_visits
        slots, _ = ops.dac_aggregate_segments(h, s.group, s.group_owner, n_slots, self.dac_w,
                                              self.dac_b, group_w=s.group_owner % 3)
        return slots.reshape(s.n_visits, 3 * self.config.dim)

    def forward(self, s: PatientStructure) -> torch.Tensor:
        h = self.fuse(s)
        visits = self.visit_representations(s, h)
        out, _ = self.gru(visits[None])
        return ops.predict_probabilities(self.mlp(out[0]), self.head.weight, self.head.bias)

    @torch.no_grad()
    def predict(self, s: PatientStructure) -> np.ndarray:
        was = self.training
        self.eval()
        try:
            return self(s).numpy().copy()
        finally:
            self.train(was)
