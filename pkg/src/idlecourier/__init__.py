"""Equilibrium and spatial pricing of a ride-sourcing platform that carries parcels while drivers idle."""

from .errors import (
    DegenerateSupplyError,
    DegenerateZoneError,
    InfeasibleRegionError,
    InfeasibleSupplyError,
    InvalidRatesError,
    ModelError,
    SingularChainError,
)
from .model import DisutilityParams, DistributionSpec, MarketParams, Network

__version__ = "0.1.0"
