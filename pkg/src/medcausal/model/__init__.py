"""Dual-granularity representation learning."""
from .checkpoint import load_checkpoint, read_header, save_checkpoint
from .network import DualGranularityModel, ModelConfig
from .structure import CoarseRelations, PatientStructure, build_patient_structure, fine_edges

__all__ = ["CoarseRelations", "DualGranularityModel", "ModelConfig", "PatientStructure",
           "build_patient_structure", "fine_edges", "load_checkpoint", "read_header",
           "save_checkpoint"]
