"""Simulation and certification of switched sliding-mode control for FES cycling."""

from .analysis import AnalysisConstants, Certificate, CertifyOptions, certify
from .controller import ControllerGains, TrajectorySpec, control_voltage, desired_trajectory
from .dynamics import CrankModel, CrankState, DynamicsParams, property_constants
from .kinematics import RegionMap, RiderGeometry, stimulation_regions, torque_transfer_ratio
from .simulator import BoundReport, Scenario, SimulationTrace, audit_bounds, simulate

__version__ = "0.1.0"

__all__ = [
    "AnalysisConstants", "BoundReport", "Certificate", "CertifyOptions", "ControllerGains",
    "CrankModel", "CrankState", "DynamicsParams", "RegionMap", "RiderGeometry", "Scenario",
    "SimulationTrace", "TrajectorySpec", "audit_bounds", "certify", "control_voltage",
    "desired_trajectory", "property_constants", "simulate", "stimulation_regions",
    "torque_transfer_ratio",
]
