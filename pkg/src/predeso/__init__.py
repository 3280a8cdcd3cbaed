"""Predictive extended-state-observer consensus for input-delayed linear multi-agent systems."""

__version__ = "0.1.0"

from .errors import (AssumptionError, CertificateError, ConfigError, DivergenceError,
                     InfeasibleError, PredesoError)
from .netgraph import Topology, default_topology
from .sysmodel import Plant, compute_certificate, synthesize_gains_thm1, synthesize_gains_thm2

__all__ = [
    "AssumptionError", "CertificateError", "ConfigError", "DivergenceError", "InfeasibleError",
    "PredesoError", "Plant", "Topology", "compute_certificate", "default_topology",
    "synthesize_gains_thm1", "synthesize_gains_thm2", "__version__",
]
