"""Self-describing model archive: parameter arrays plus a versioned JSON header."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from ..ehr import MoleculeMap
from ..errors import ConfigError, DataFormatError, MissingArtifactError
from .network import DualGranularityModel, ModelConfig

FORMAT = "medcausal-checkpoint"
VERSION = 1
HEADER_KEY = "__header__"


def save_checkpoint(path: str | Path, model: DualGranularityModel, fingerprint: str,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    state = model.state_dict()
    header = {"format": FORMAT, "version": VERSION, "fingerprint": fingerprint,
              "model_config": model.config.to_dict(), "parameters": sorted(state),
              "extra": extra or {}}
    arrays = {f"param:{k}": v.detach().cpu().numpy() for k, v in state.items()}
    with path.open("wb") as fh:
        np.savez(fh, **{HEADER_KEY: np.array(json.dumps(header, sort_keys=True))}, **arrays)
    return path


def read_header(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as z:
        if HEADER_KEY not in z:
            raise DataFormatError("archive has no checkpoint header", path)
        header = json.loads(str(z[HEADER_KEY]))
    if header.get("format") != FORMAT:
        raise DataFormatError("not a model checkpoint", path)
    if header.get("version") != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {header.get('version')}", path)
    return header


def load_checkpoint(path: str | Path, molecules: MoleculeMap | None = None,
                    expected_fingerprint: str | None = None) -> tuple[DualGranularityModel, dict]:
    """Rebuild the model; refuses a checkpoint whose fingerprint differs from the expected one."""
    header = read_header(path)
    if expected_fingerprint is not None and header["fingerprint"] != expected_fingerprint:
        raise ConfigError(f"checkpoint fingerprint {header['fingerprint']} does not match "
                          f"the configuration ({expected_fingerprint})")
    model = DualGranularityModel(ModelConfig(**header["model_config"]), molecules)
    with np.load(path, allow_pickle=False) as z:
        state = {name: torch.as_tensor(z[f"param:{name}"].copy()) for name in header["parameters"]}
    model.load_state_dict(state)
    return model, header
