"""Tracking-by-detection of simulated soccer players under video degradation.

Modules: ``core`` (boxes, assignment), ``motion`` (CVA, ECC camera
compensation), ``simulate`` (ground truth and calibrated detector
surrogates), ``tracker``, ``metrics`` (CLEAR-MOT), ``io`` (MOT files and
TOML config), ``experiment`` (the grid runner) and ``cli``.
"""

__version__ = "0.1.0"

from .core import BoundingBox, Detection, DetectionBatch, iou, iou_matrix, solve_assignment
from .metrics import MetricsReport, evaluate
from .simulate import QualityProfile, ScenarioConfig, degrade, default_profile_grid, generate_scenario
from .tracker import TrackerConfig, run_sequence

__all__ = [
    "__version__",
    "BoundingBox",
    "Detection",
    "DetectionBatch",
    "iou",
    "iou_matrix",
    "solve_assignment",
    "MetricsReport",
    "evaluate",
    "QualityProfile",
    "ScenarioConfig",
    "degrade",
    "default_profile_grid",
    "generate_scenario",
    "TrackerConfig",
    "run_sequence",
]
