"""Sensing-assisted joint beamforming for a downlink with two semi-passive RISs."""
from .config import ConfigError, SystemConfig, load_config, loads_config
from .orchestrator import JointBeamformer, joint_optimize, run_experiment
from .scenario import make_scenario, synth_channels

__all__ = [
    "ConfigError", "JointBeamformer", "SystemConfig", "joint_optimize", "load_config",
    "loads_config", "make_scenario", "run_experiment", "synth_channels",
]
__version__ = "0.1.0"
