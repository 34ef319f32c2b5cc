"""Exact simulation of a superconducting-qubit lattice as a Bose-Hubbard
system with quasiperiodic frequency assignment, quantifying how the
many-body-localized regime suppresses residual-coupling and crosstalk
errors (fidelity, IPR, Renyi-2 entropy, XEB circuits, T1/T2 trajectories).
"""

from . import circuits, cli, engine, lattice, model, noise, observables
from .errors import (BasisMismatchError, ConfigError, ConvergenceError,
                     GuardError, MblCalibError)

__version__ = "0.1.0"

__all__ = [
    "circuits", "cli", "engine", "lattice", "model", "noise", "observables",
    "BasisMismatchError", "ConfigError", "ConvergenceError", "GuardError",
    "MblCalibError", "__version__",
]
