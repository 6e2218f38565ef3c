"""Pipeline stages with content-addressed run directories.

Layout under the output root::

    data-<fp>/    generated corpus (skipped when external record files are configured)
    mine-<fp>/    causal graphs, effect matrices, relevance strata
    train-<fp>/   checkpoint and run log
    eval-<fp>/    metric report, baseline report, correction audit

Each stage reads only the persisted outputs of earlier stages. The split is
recomputed from the records and the seed, which is deterministic.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .causal import (CausalEffectMatrix, CausalGraph, RelevanceStrata, SearchConfig, cooccurrence_effects,
                     estimate_causal_effects, greedy_equivalence_search, read_effects, read_graph,
                     read_strata, stratify, write_effects, write_graph, write_strata)
from .config import RunConfig
from .correction import AUDIT_HEADER, audit_rows
from .ehr import (DDIMatrix, MoleculeMap, PatientRecord, Vocabularies, load_ddi, load_molecule_map,
                  load_records, split_dataset, visit_matrix)
from .errors import ConfigError, MissingArtifactError
from .metrics import METRICS, MetricReport, evaluate_predictions
from .model import (CoarseRelations, DualGranularityModel, ModelConfig, build_patient_structure,
                    load_checkpoint, save_checkpoint)
from .synthetic import FILES, generate_synthetic, write_synthetic
from .training import bootstrap_report, frequency_baseline, predict, train

logger = logging.getLogger(__name__)

GRAPH_KINDS = ("disease", "procedure", "medication")
ABLATIONS = (
    ("full", {}),
    ("w/o C", {"wo_C": True}),
    ("w/o F", {"wo_F": True}),
    ("w/o C+F", {"wo_C": True, "wo_F": True}),
    ("w/o BC", {"wo_BC": True}),
    ("w/o C+F+BC", {"wo_C": True, "wo_F": True, "wo_BC": True}),
)


@dataclass
class Inputs:
    records: list[PatientRecord]
    vocabs: Vocabularies
    ddi: DDIMatrix
    molecules: MoleculeMap

    def split(self, cfg: RunConfig):
        return split_dataset(self.records, cfg.split_ratios, cfg.seed)


@dataclass
class Mined:
    graphs: dict[str, CausalGraph]
    effects_dm: CausalEffectMatrix
    effects_pm: CausalEffectMatrix
    strata_dm: RelevanceStrata
    strata_pm: RelevanceStrata

    @property
    def relations(self) -> CoarseRelations:
        return CoarseRelations.from_strata(self.strata_dm, self.strata_pm)


def stage_dir(out: str | Path, stage: str, cfg: RunConfig) -> Path:
    fp = {"data": cfg.data_fingerprint, "mine": cfg.mine_fingerprint,
          "train": cfg.train_fingerprint, "eval": cfg.eval_fingerprint}[stage]()
    return Path(out) / f"{stage}-{fp}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{path} is missing; run the '{stage}' stage first")
    return path


# --------------------------------------------------------------------------- #
# data


def run_generate(cfg: RunConfig, out: str | Path) -> Path:
    spec = cfg.synthetic_spec()
    data = generate_synthetic(spec)
    target = stage_dir(out, "data", cfg)
    write_synthetic(target, data, spec)
    n_visits = sum(len(r.visits) for r in data.records)
    logger.info("generated %d patients, %d visits in %s", len(data.records), n_visits, target)
    return target


def load_inputs(cfg: RunConfig, out: str | Path, strict: bool = False) -> Inputs:
    if cfg.records:
        if not cfg.ddi or not cfg.molecules:
            raise ConfigError("external records need 'ddi' and 'molecules' paths as well")
        paths = {"records": Path(cfg.records), "ddi": Path(cfg.ddi), "molecules": Path(cfg.molecules)}
        for p in paths.values():
            if not p.exists():
                raise MissingArtifactError(f"input file {p} does not exist")
    else:
        base = stage_dir(out, "data", cfg)
        paths = {k: _require(base / FILES[k], "generate") for k in ("records", "ddi", "molecules")}
    records, vocabs = load_records(paths["records"], strict=strict, min_visits=cfg.min_visits)
    if not records:
        raise ConfigError("no patients left after dropping incomplete visits")
    ddi = load_ddi(paths["ddi"], vocabs.medication, strict=strict)
    mmap, mol_vocab = load_molecule_map(paths["molecules"], vocabs.medication, strict=strict)
    return Inputs(records, vocabs.with_molecules(mol_vocab), ddi, mmap)


# --------------------------------------------------------------------------- #
# mining


def mine(train_records, vocabs: Vocabularies, cfg: RunConfig) -> Mined:
    search = SearchConfig(cfg.max_indegree, cfg.min_support, cfg.ess)
    graphs = {}
    for kind in GRAPH_KINDS:
        data = visit_matrix(train_records, kind, len(vocabs.of(kind)))
        graphs[kind] = greedy_equivalence_search(data, search, entity_kind=kind)
    dm, pm = estimate_causal_effects(train_records, vocabs, graphs, min_support=cfg.min_support,
                                     l2=cfg.glm_l2)
    sd, sp = stratify(dm, cfg.strata_n, cfg.strata_K), stratify(pm, cfg.strata_n, cfg.strata_K)
    return Mined(graphs, dm, pm, sd, sp)


def run_mine(cfg: RunConfig, out: str | Path, strict: bool = False) -> Path:
    inputs = load_inputs(cfg, out, strict)
    train_records, _, _ = inputs.split(cfg)
    start = time.perf_counter()
    mined = mine(train_records, inputs.vocabs, cfg)
    seconds = time.perf_counter() - start
    target = stage_dir(out, "mine", cfg)
    target.mkdir(parents=True, exist_ok=True)
    v = inputs.vocabs
    for kind, g in mined.graphs.items():
        write_graph(target / f"graph_{kind}.csv", g, v.of(kind))
    write_effects(target / "effects_dm.csv", mined.effects_dm, v.disease, v.medication)
    write_effects(target / "effects_pm.csv", mined.effects_pm, v.procedure, v.medication)
    sd, sp = mined.strata_dm, mined.strata_pm
    write_strata(target / "strata_dm.csv", sd, mined.effects_dm, v.disease, v.medication)
    write_strata(target / "strata_pm.csv", sp, mined.effects_pm, v.procedure, v.medication)
    summary = {
        "fingerprint": cfg.mine_fingerprint(),
        "train_patients": len(train_records),
        "graph_edges": {k: len(g.edges) for k, g in mined.graphs.items()},
        "nonzero_effects": {"dm": int(np.count_nonzero(mined.effects_dm.values)),
                            "pm": int(np.count_nonzero(mined.effects_pm.values))},
        "strata_sizes": {"dm": sd.sizes().tolist(), "pm": sp.sizes().tolist()},
    }
    _write_json(target / "summary.json", summary)
    logger.info("mining finished in %.1fs: %s", seconds, summary)
    return target


def load_mined(cfg: RunConfig, out: str | Path, vocabs: Vocabularies) -> Mined:
    base = stage_dir(out, "mine", cfg)
    _require(base / "summary.json", "mine")
    graphs = {k: read_graph(_require(base / f"graph_{k}.csv", "mine"), vocabs.of(k)) for k in GRAPH_KINDS}
    dm = read_effects(base / "effects_dm.csv", "disease", vocabs.disease, vocabs.medication)
    pm = read_effects(base / "effects_pm.csv", "procedure", vocabs.procedure, vocabs.medication)
    sd = read_strata(base / "strata_dm.csv", vocabs.disease, vocabs.medication)
    sp = read_strata(base / "strata_pm.csv", vocabs.procedure, vocabs.medication)
    return Mined(graphs, dm, pm, sd, sp)


# --------------------------------------------------------------------------- #
# model inputs


def representation_inputs(cfg: RunConfig, out, inputs: Inputs, train_records):
    """Coarse relations and causal graphs the encoder sees, honouring the C ablation.

    Without causal knowledge the coarse edges are stratified co-occurrence
    rates and every entity is treated as causally independent.
    """
    if cfg.wo_C:
        dm, pm = cooccurrence_effects(train_records, inputs.vocabs)
        rel = CoarseRelations.from_strata(stratify(dm, cfg.strata_n, cfg.strata_K),
                                          stratify(pm, cfg.strata_n, cfg.strata_K))
        return rel, None
    mined = load_mined(cfg, out, inputs.vocabs)
    return mined.relations, mined.graphs


def model_config(cfg: RunConfig, inputs: Inputs) -> ModelConfig:
    v = inputs.vocabs
    return ModelConfig(
        n_diseases=len(v.disease), n_procedures=len(v.procedure), n_medications=len(v.medication),
        n_molecules=inputs.molecules.n_molecules, dim=cfg.dim, n_relations=cfg.strata_n,
        gin_layers=cfg.gin_layers, rgcn_layers=cfg.rgcn_layers, fusion_cycles=cfg.fusion_cycles,
        mlp_hidden=cfg.mlp_hidden, dropout=cfg.dropout, activation=cfg.activation,
        self_loop=cfg.self_loop, use_molecules=not cfg.wo_F)


def structures(records, relations, graphs, n_meds):
    return [build_patient_structure(r, relations, graphs, n_meds) for r in records]


# --------------------------------------------------------------------------- #
# training


LOG_FIELDS = ("epoch", "steps", "loss", "bce", "multi", "ddi", "alpha", "val_jaccard", "val_ddi_rate",
              "val_ddi_rate_label_denominator", "val_f1", "val_prauc", "val_avg_med")


def run_train(cfg: RunConfig, out: str | Path, strict: bool = False) -> Path:
    torch.set_num_threads(1)
    inputs = load_inputs(cfg, out, strict)
    train_records, val_records, _ = inputs.split(cfg)
    relations, graphs = representation_inputs(cfg, out, inputs, train_records)
    effects = None
    if cfg.correct_in_loss:
        mined = load_mined(cfg, out, inputs.vocabs)
        effects = (mined.effects_dm, mined.effects_pm)
    n_meds = len(inputs.vocabs.medication)
    tr = structures(train_records, relations, graphs, n_meds)
    va = structures(val_records, relations, graphs, n_meds)
    torch.manual_seed(cfg.seed)
    model = DualGranularityModel(model_config(cfg, inputs), None if cfg.wo_F else inputs.molecules)

    target = stage_dir(out, "train", cfg)
    target.mkdir(parents=True, exist_ok=True)
    log_path = target / "run_log.csv"
    with log_path.open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerow(LOG_FIELDS)

    def append(row):
        with log_path.open("a", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerow([repr(row[k]) if k in row else ""
                                                          for k in LOG_FIELDS])

    result = train(model, tr, va, inputs.ddi, cfg.loss_config(), cfg.train_config(),
                   effects=effects, correction=cfg.correction_config(), on_epoch=append)
    save_checkpoint(target / "checkpoint.npz", model, cfg.train_fingerprint(),
                    extra={"best_epoch": result.best_epoch, "best_val_jaccard": result.best_val_jaccard})
    _write_json(target / "train_summary.json", {
        "fingerprint": cfg.train_fingerprint(), "best_epoch": result.best_epoch,
        "best_val_jaccard": result.best_val_jaccard, "seconds": round(result.seconds, 2),
        "train_patients": len(tr), "val_patients": len(va)})
    (target / "config.txt").write_text(cfg.to_text())
    logger.info("training finished in %.1fs, best epoch %d", result.seconds, result.best_epoch)
    return target


# --------------------------------------------------------------------------- #
# evaluation


def _load_model(cfg: RunConfig, out, inputs: Inputs, checkpoint: str | Path | None):
    path = Path(checkpoint) if checkpoint else stage_dir(out, "train", cfg) / "checkpoint.npz"
    _require(path, "train")
    model, _ = load_checkpoint(path, None if cfg.wo_F else inputs.molecules,
                               expected_fingerprint=cfg.train_fingerprint())
    return model


def _test_setup(cfg: RunConfig, out, strict: bool, checkpoint):
    torch.set_num_threads(1)
    inputs = load_inputs(cfg, out, strict)
    train_records, _, test_records = inputs.split(cfg)
    model = _load_model(cfg, out, inputs, checkpoint)
    relations, graphs = representation_inputs(cfg, out, inputs, train_records)
    effects = None
    if not cfg.wo_BC:
        mined = load_mined(cfg, out, inputs.vocabs)
        effects = (mined.effects_dm, mined.effects_pm)
    return inputs, train_records, test_records, model, relations, graphs, effects


def run_evaluate(cfg: RunConfig, out: str | Path, strict: bool = False,
                 checkpoint: str | Path | None = None) -> Path:
    inputs, train_records, test_records, model, relations, graphs, effects = _test_setup(
        cfg, out, strict, checkpoint)
    n_meds = len(inputs.vocabs.medication)
    te = structures(test_records, relations, graphs, n_meds)
    audit = []
    preds = predict(model, te, effects, cfg.correction_config(), audit=audit)
    boot = dict(rounds=cfg.bootstrap_rounds, fraction=cfg.bootstrap_fraction, seed=cfg.seed,
                replace=cfg.bootstrap_replace)
    report = bootstrap_report(preds, inputs.ddi, **boot)
    report.meta.update({"fingerprint": cfg.eval_fingerprint(), "test_patients": len(te),
                        "bias_correction": not cfg.wo_BC})
    target = stage_dir(out, "eval", cfg)
    target.mkdir(parents=True, exist_ok=True)
    report.write_csv(target / "report.csv", label=variant_label(cfg))
    baseline = bootstrap_report(frequency_baseline(train_records, test_records, n_meds), inputs.ddi, **boot)
    baseline.meta.update({"fingerprint": cfg.eval_fingerprint()})
    baseline.write_csv(target / "baseline.csv", label="frequency")
    direct = {"model": evaluate_predictions(preds, inputs.ddi),
              "frequency": evaluate_predictions(frequency_baseline(train_records, test_records, n_meds),
                                                inputs.ddi)}
    _write_json(target / "direct_metrics.json", direct)
    with (target / "audit.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AUDIT_HEADER)
        for pid, t, res in audit:
            w.writerows(audit_rows(pid, t, res, inputs.vocabs.medication.codes))
    logger.info("evaluation: %s", dict(zip(METRICS, report.table_row())))
    return target


def variant_label(cfg: RunConfig) -> str:
    parts = [name for name, flag in (("C", cfg.wo_C), ("F", cfg.wo_F), ("BC", cfg.wo_BC)) if flag]
    return "full" if not parts else "w/o " + "+".join(parts)


def explain(cfg: RunConfig, out: str | Path, patient_id: str, strict: bool = False,
            checkpoint: str | Path | None = None) -> list[tuple]:
    """Correction audit rows for every visit of one patient (any split)."""
    if cfg.wo_BC:
        raise ConfigError("explain needs bias correction; unset wo_BC")
    torch.set_num_threads(1)
    inputs = load_inputs(cfg, out, strict)
    record = next((r for r in inputs.records if r.patient_id == patient_id), None)
    if record is None:
        raise ConfigError(f"unknown patient {patient_id!r}")
    train_records, _, _ = inputs.split(cfg)
    model = _load_model(cfg, out, inputs, checkpoint)
    relations, graphs = representation_inputs(cfg, out, inputs, train_records)
    mined = load_mined(cfg, out, inputs.vocabs)
    audit = []
    s = structures([record], relations, graphs, len(inputs.vocabs.medication))
    predict(model, s, (mined.effects_dm, mined.effects_pm), cfg.correction_config(), audit=audit)
    rows = []
    for pid, t, res in audit:
        rows.extend(audit_rows(pid, t, res, inputs.vocabs.medication.codes))
    return rows


# --------------------------------------------------------------------------- #
# whole pipeline and ablations


def needs_mining(cfg: RunConfig) -> bool:
    return not (cfg.wo_C and cfg.wo_BC and not cfg.correct_in_loss)


def run_all(cfg: RunConfig, out: str | Path, strict: bool = False, reuse: bool = True) -> Path:
    """generate (if synthetic) -> mine (if needed) -> train -> evaluate, reusing finished stages."""
    if not cfg.records and not (reuse and (stage_dir(out, "data", cfg) / FILES["records"]).exists()):
        run_generate(cfg, out)
    if needs_mining(cfg) and not (reuse and (stage_dir(out, "mine", cfg) / "summary.json").exists()):
        run_mine(cfg, out, strict)
    if not (reuse and (stage_dir(out, "train", cfg) / "checkpoint.npz").exists()):
        run_train(cfg, out, strict)
    return run_evaluate(cfg, out, strict)


def read_report(path: str | Path) -> MetricReport:
    rounds = []
    meta = {}
    with Path(path).open(newline="") as fh:
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].partition(":")
                meta[k.strip()] = v.strip()
                continue
            row = next(csv.reader([line]))
            if row and row[0].startswith("round"):
                vals = [float(x) for x in row[1:]]
                rounds.append(dict(zip(list(METRICS) + ["ddi_rate_label_denominator"], vals)))
    return MetricReport(rounds, meta)


def run_ablation(cfg: RunConfig, out: str | Path, strict: bool = False) -> Path:
    """Runs every ablation variant and writes one report row per variant."""
    rows = []
    for label, flags in ABLATIONS:
        variant = cfg.replace(**{"wo_C": False, "wo_F": False, "wo_BC": False, **flags})
        report = read_report(run_all(variant, out, strict) / "report.csv")
        rows.append([label] + report.table_row())
    target = Path(out) / f"ablation-{cfg.replace(wo_C=False, wo_F=False, wo_BC=False).eval_fingerprint()}.csv"
    with target.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "Jaccard", "DDI", "F1", "PRAUC", "Avg.#Med"])
        w.writerows(rows)
    return target
