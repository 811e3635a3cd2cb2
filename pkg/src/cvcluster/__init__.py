"""Simulation and analysis of frequency-multiplexed continuous-variable cluster states."""

from .gaussian import (
    DriveSpec,
    DriveTone,
    ModeLayout,
    SqueezeProfile,
    eom_symplectic,
    squeeze_db_to_r,
    theory_covariance,
    tms_symplectic,
)
from .graph import AdjacencyGraph, covariance_adjacency, expected_hypercube, extract_v_u, verify_structure
from .nullifier import epr_nullifier_matrix, error_matrix, nullifier_report, transform_nullifiers

__version__ = "0.1.0"

__all__ = [
    "AdjacencyGraph",
    "DriveSpec",
    "DriveTone",
    "ModeLayout",
    "SqueezeProfile",
    "covariance_adjacency",
    "eom_symplectic",
    "epr_nullifier_matrix",
    "error_matrix",
    "expected_hypercube",
    "extract_v_u",
    "nullifier_report",
    "squeeze_db_to_r",
    "theory_covariance",
    "tms_symplectic",
    "transform_nullifiers",
    "verify_structure",
]
