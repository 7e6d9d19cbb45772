"""Ancillary service qualification for pumped storage hydropower plants.

Waterway transients, unit dynamics and controllers are simulated together;
grid-code envelopes turn the traces into compliance reports and the reports
into a scored services matrix.
"""

from .campaign import FRADES_STACKS, run_campaign
from .config import REFERENCE_PLANT, ConfigError, load_manifest, load_plant, validate
from .envelopes import ComplianceReport, FcrLimits, AfrrLimits, FfrLimits, Violation
from .hydraulics import HydraulicNetwork, NetworkError, SimulationError, TransientSolver
from .machine import MachineCharacteristic, UnitConfig, swing_step
from .matrix import AncillaryServicesMatrix, ScoringConfig, parse_matrix, read_score_file, render_matrix
from .plant import Plant, Scenario, Simulator, UnitPlan
from .qualification import (
    TechnologyStack,
    afrr_capability,
    black_start_capacity,
    fcr_capability,
    ffr_capability,
    synthetic_inertia_test,
    voltvar_report,
)

__version__ = "0.1.0"

__all__ = [
    "AfrrLimits", "AncillaryServicesMatrix", "ComplianceReport", "ConfigError", "FRADES_STACKS",
    "FcrLimits", "FfrLimits", "HydraulicNetwork", "MachineCharacteristic", "NetworkError", "Plant",
    "REFERENCE_PLANT", "Scenario", "ScoringConfig", "SimulationError", "Simulator", "TechnologyStack",
    "TransientSolver", "UnitConfig", "UnitPlan", "Violation", "afrr_capability", "black_start_capacity",
    "fcr_capability", "ffr_capability", "load_manifest", "load_plant", "parse_matrix", "read_score_file",
    "render_matrix", "run_campaign", "swing_step", "synthetic_inertia_test", "validate", "voltvar_report",
]
