"""Exception types shared across the package.

The CLI maps these onto process exit codes, so keep the split coarse:
configuration problems vs numerical guards/convergence vs everything else.
"""


class MblCalibError(Exception):
    """Base class for all package errors."""


class ConfigError(MblCalibError):
    """Invalid configuration, preset, or input value."""


class BasisMismatchError(MblCalibError):
    """Operands are defined over different Fock bases."""


class GuardError(MblCalibError):
    """A numerical safety guard (dimension, physicality) was exceeded."""


class ConvergenceError(MblCalibError):
    """An iterative routine failed to reach its tolerance."""
