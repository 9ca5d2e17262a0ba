"""Deterministic desk-scale simulator for blockchain-coordinated federated
learning: trainer/validator nodes, trust-weighted averaging, a voting-BFT
ledger, and three synchronization schemes, all driven by a virtual clock."""

__version__ = "0.1.0"

from .config import SimConfig, StopRounds, StopTime
from .metrics import MetricsLog
from .simulation import Simulation, run

__all__ = ["SimConfig", "StopRounds", "StopTime", "MetricsLog", "Simulation", "run",
           "__version__"]
