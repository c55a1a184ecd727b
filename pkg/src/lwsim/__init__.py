"""Discrete-event simulator for bidirectional LoRaWAN Class-A networks."""

from lwsim._kernels import BACKEND
from lwsim.network import RunResult, simulate
from lwsim.scenario import ConfigError, ScenarioConfig, load_config

__version__ = "0.1.0"

__all__ = ["BACKEND", "ConfigError", "RunResult", "ScenarioConfig", "load_config", "simulate"]
