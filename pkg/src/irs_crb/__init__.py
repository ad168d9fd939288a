"""Max-CRB transmit and reflective beamforming for multi-active-IRS sensing."""
from .ao import AoOptions, AoResult, AoTrace, Mode, run_ao
from .scenario import Scene, ScenarioConfig

__all__ = ["AoOptions", "AoResult", "AoTrace", "Mode", "Scene", "ScenarioConfig", "run_ao"]
__version__ = "0.1.0"
