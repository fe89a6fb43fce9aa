"""Certifiable range-only pose initialization through semidefinite relaxations."""

from .extraction import EstimateReport, estimate
from .lie import Pose, Twist, exp_se, log_se
from .scenario import Mode, Scenario, load_scenario, make_trial, preset, save_scenario

__version__ = "0.1.0"

__all__ = [
    "EstimateReport",
    "Mode",
    "Pose",
    "Scenario",
    "Twist",
    "estimate",
    "exp_se",
    "load_scenario",
    "log_se",
    "make_trial",
    "preset",
    "save_scenario",
]
