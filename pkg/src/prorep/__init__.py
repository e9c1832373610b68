"""Inverse probability weighted estimation of risk under proportionally
representative treatment regimes with limited resources, plus an exact
g-formula oracle for discrete data-generating models."""
from .boot import BootstrapResult, TooManyFailures, bootstrap
from .data import PanelDataset, PanelSchema, load_panel
from .oracle import DiscreteDGM, gformula_hazard_repr, gformula_risk, random_dgm
from .pipeline import Estimate, PipelineConfig, estimate, prepare, run_pipeline, saturated_config
from .regime import RegimeSpec, preset
from .sim import TransplantGenerator, population_panel, sample_dgm

__version__ = "0.1.0"

__all__ = [
    "BootstrapResult",
    "DiscreteDGM",
    "Estimate",
    "PanelDataset",
    "PanelSchema",
    "PipelineConfig",
    "RegimeSpec",
    "TooManyFailures",
    "TransplantGenerator",
    "bootstrap",
    "estimate",
    "gformula_hazard_repr",
    "gformula_risk",
    "load_panel",
    "population_panel",
    "prepare",
    "preset",
    "random_dgm",
    "run_pipeline",
    "sample_dgm",
    "saturated_config",
]
