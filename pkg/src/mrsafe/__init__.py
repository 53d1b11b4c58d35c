"""mrsafe: predictive safety-filtered multi-robot navigation.

A differential-drive tracking controller, a look-ahead pairwise safety
filter solved as one wheel-acceleration QP per step, deadlock deconfliction
by minimum-attitude-angle escape, and a deterministic batch simulator with
CSV/SVG/JSON artifacts.
"""

from .metrics import MetricReport, build_report
from .scenario import (ControlGains, NoiseSpec, Obstacle, ParseError, Pose,
                       ReferenceSpec, RobotParams, RobotSetup, RobotState,
                       SafetyOptions, ScenarioSpec, ValidationError,
                       load_scenario, parse_scenario, serialize_scenario)
from .sim import HAVE_FASTCORE, CollisionEvent, SimLog, audit_collisions, run

__version__ = "0.1.0"

__all__ = [
    "ControlGains", "NoiseSpec", "Obstacle", "ParseError", "Pose",
    "ReferenceSpec", "RobotParams", "RobotSetup", "RobotState",
    "SafetyOptions", "ScenarioSpec", "ValidationError", "load_scenario",
    "parse_scenario", "serialize_scenario", "MetricReport", "build_report",
    "HAVE_FASTCORE", "CollisionEvent", "SimLog", "audit_collisions", "run",
    "__version__",
]
