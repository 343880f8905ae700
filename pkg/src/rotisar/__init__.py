"""Passive ISAR imaging of rotating targets from receiver-pair correlations.

Modules
-------
geometry             rotation model, receiver layouts, travel times
waveform             pulses and synthetic echoes (time and frequency domain)
correlation          cross-spectra, autocorrelation envelopes, binary storage
rotation_estimation  spin axis and rate from autocorrelation support maxima
migration            two-point migration and image extraction
resolution           analytic point-spread kernels
pipeline, cli        orchestration, sweeps and the command line
"""

from .config import ConfigError, ScenarioConfig, load_config, load_preset
from .geometry import ArrayLayout, RotationParams, Scene, Trajectory
from .migration import ImageGrid
from .pipeline import RunReport, StageError, run_pipeline, sweep
from .waveform import Pulse, Scenario

__all__ = [
    "ArrayLayout", "ConfigError", "ImageGrid", "Pulse", "RotationParams", "RunReport",
    "Scenario", "ScenarioConfig", "Scene", "StageError", "Trajectory", "load_config",
    "load_preset", "run_pipeline", "sweep",
]
__version__ = "0.1.0"
