"""Flat key=value run configuration, per-stage fingerprints and derived component configs."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .correction import CorrectionConfig
from .errors import ConfigError
from .losses import LossConfig
from .synthetic import SyntheticSpec
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    # data: empty paths mean "use the generated corpus in <out>/data"
    records: str = ""
    ddi: str = ""
    molecules: str = ""
    min_visits: int = 1
    gen_seed: int = -1            # -1 follows ``seed``
    gen_n_diseases: int = 30
    gen_n_procedures: int = 10
    gen_n_medications: int = 20
    gen_n_molecules: int = 15
    gen_n_patients: int = 2000
    gen_dag_edge_density: float = 0.08
    gen_spurious_rate: float = 0.01
    gen_ddi_density: float = 0.1
    gen_planted: str = ""         # "disease:3:5:0.95;procedure:1:2:0.9"
    split_train: float = 2 / 3
    split_val: float = 1 / 6
    split_test: float = 1 / 6
    # mining
    max_indegree: int = 4
    min_support: int = 5
    ess: float = 1.0
    glm_l2: float = 0.3
    glm_covariates: str = "sources_only"
    strata_n: int = 5
    strata_K: float = 1 / 3
    # model
    dim: int = 64
    gin_layers: int = 1
    rgcn_layers: int = 2
    fusion_cycles: int = 1
    mlp_hidden: int = 0
    dropout: float = 0.5
    activation: str = "tanh"
    self_loop: bool = True
    # loss and training
    beta: float = 0.95
    gamma: float = 0.06
    kp: float = 0.05
    epochs: int = 20
    lr: float = 5e-4
    reg: float = 0.05
    correct_in_loss: bool = False
    # correction and evaluation
    delta1: float = 0.97
    delta2: float = 0.90
    tau1: float = 0.10
    tau2: float = 0.10
    threshold: float = 0.5
    bootstrap_rounds: int = 10
    bootstrap_fraction: float = 0.8
    bootstrap_replace: bool = True
    # ablations
    wo_C: bool = False
    wo_F: bool = False
    wo_BC: bool = False

    def validate(self) -> "RunConfig":
        if self.glm_covariates != "sources_only":
            raise ConfigError("glm_covariates supports only 'sources_only'")
        if self.min_support < 1 or self.max_indegree < 0:
            raise ConfigError("min_support must be >= 1 and max_indegree >= 0")
        if self.strata_n < 2 or not 0 < self.strata_K < 1:
            raise ConfigError("strata_n must be >= 2 and strata_K in (0, 1)")
        if min(self.split_ratios) < 0 or not math.isclose(sum(self.split_ratios), 1.0, abs_tol=1e-9):
            raise ConfigError("split_train, split_val and split_test must be non-negative and sum to 1")
        self.synthetic_spec().validate()
        self.loss_config().validate()
        self.train_config().validate()
        self.correction_config().validate()
        if self.bootstrap_rounds < 1 or not 0 < self.bootstrap_fraction <= 1:
            raise ConfigError("bootstrap needs rounds >= 1 and 0 < fraction <= 1")
        return self

    # -- derived component configs -------------------------------------------
    @property
    def generation_seed(self) -> int:
        return self.seed if self.gen_seed < 0 else self.gen_seed

    @property
    def split_ratios(self) -> tuple[float, float, float]:
        return (self.split_train, self.split_val, self.split_test)

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            n_diseases=self.gen_n_diseases, n_procedures=self.gen_n_procedures,
            n_medications=self.gen_n_medications, n_molecules=self.gen_n_molecules,
            n_patients=self.gen_n_patients, seed=self.generation_seed,
            dag_edge_density=self.gen_dag_edge_density, spurious_rate=self.gen_spurious_rate,
            ddi_density=self.gen_ddi_density, planted=parse_planted(self.gen_planted))

    def loss_config(self) -> LossConfig:
        return LossConfig(self.beta, self.gamma, self.kp)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.lr, self.reg, self.seed, self.correct_in_loss)

    def correction_config(self) -> CorrectionConfig:
        return CorrectionConfig(self.delta1, self.delta2, self.tau1, self.tau2, self.threshold)

    # -- fingerprints ---------------------------------------------------------
    def _hash(self, keys, parent: str = "") -> str:
        payload = {k: getattr(self, k) for k in sorted(keys)}
        blob = json.dumps({"parent": parent, "values": payload}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def data_fingerprint(self) -> str:
        keys = ["records", "ddi", "molecules", "min_visits"]
        if not self.records:
            keys += [f.name for f in fields(self) if f.name.startswith("gen_") and f.name != "gen_seed"]
            keys.append("generation_seed")
        return self._hash(keys)

    def mine_fingerprint(self) -> str:
        keys = ["seed", "split_train", "split_val", "split_test", "max_indegree", "min_support", "ess",
                "glm_l2", "glm_covariates", "strata_n", "strata_K"]
        return self._hash(keys, self.data_fingerprint())

    def train_fingerprint(self) -> str:
        keys = ["dim", "gin_layers", "rgcn_layers", "fusion_cycles", "mlp_hidden", "dropout",
                "activation", "self_loop", "beta", "gamma", "kp", "epochs", "lr", "reg",
                "correct_in_loss", "wo_C", "wo_F"]
        if self.correct_in_loss:
            keys += ["delta1", "delta2", "tau1", "tau2"]
        return self._hash(keys, self.mine_fingerprint())

    def eval_fingerprint(self) -> str:
        keys = ["delta1", "delta2", "tau1", "tau2", "threshold", "bootstrap_rounds",
                "bootstrap_fraction", "bootstrap_replace", "wo_BC"]
        return self._hash(keys, self.train_fingerprint())

    def fingerprint(self) -> str:
        return self._hash([f.name for f in fields(self)])

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_format(getattr(self, f.name))}\n" for f in fields(self))

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, raw: str, kind):
    text = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if kind in (int, "int"):
            return int(text)
        if kind in (float, "float"):
            if "/" in text:
                num, den = text.split("/", 1)
                return float(num) / float(den)
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return text


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_pairs(lines, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value, _FIELD_TYPES[key])
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then ``overrides`` (already-typed or string values)."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} does not exist")
        values.update(parse_pairs(p.read_text().splitlines(), str(p)))
    for key, value in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _coerce(key, value, _FIELD_TYPES[key]) if isinstance(value, str) else value
    return RunConfig(**values).validate()


def parse_planted(text: str) -> tuple[tuple[str, int, int, float], ...]:
    if not text.strip():
        return ()
    rows = []
    for part in text.split(";"):
        bits = part.strip().split(":")
        if len(bits) != 4:
            raise ConfigError(f"planted entry {part!r} is not kind:source:medication:rho")
        try:
            rows.append((bits[0], int(bits[1]), int(bits[2]), float(bits[3])))
        except ValueError:
            raise ConfigError(f"planted entry {part!r} has non-numeric fields") from None
    return tuple(rows)


def format_planted(planted) -> str:
    return ";".join(f"{k}:{s}:{m}:{r!r}" for k, s, m, r in planted)
