"""Two-server asymmetric secure aggregation over LWE with lattice zero-knowledge arguments."""

from .params import ParameterError, ProtocolParams, default_params, toy_params
from .lwe_commit import public_setup
from .harness import ScenarioConfig, TranscriptLog, ideal_aggregate, parse_config, run_scenario

__all__ = [
    "ParameterError",
    "ProtocolParams",
    "default_params",
    "toy_params",
    "public_setup",
    "ScenarioConfig",
    "TranscriptLog",
    "ideal_aggregate",
    "parse_config",
    "run_scenario",
]

__version__ = "0.1.0"
