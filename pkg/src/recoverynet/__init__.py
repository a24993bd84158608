"""Agent-based post-disaster recovery simulation on a three-layer network of
homes, points of interest and county water/sewer systems."""

from .dynamics import DynamicParams, LogisticCurveParams
from .engine import SCENARIOS, InitialLevels, Scenario, SimulationConfig, run
from .geo import GeoPoint, haversine_km
from .network import Layer, MultilayerNetwork, build_network

__all__ = [
    "DynamicParams",
    "GeoPoint",
    "InitialLevels",
    "Layer",
    "LogisticCurveParams",
    "MultilayerNetwork",
    "SCENARIOS",
    "Scenario",
    "SimulationConfig",
    "build_network",
    "haversine_km",
    "run",
]

__version__ = "0.1.0"
