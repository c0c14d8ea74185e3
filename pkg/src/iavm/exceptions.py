"""Exception hierarchy for the iavm package."""


class IAVMError(Exception):
    """Base class for all package errors."""


class MissingAttributeError(IAVMError, KeyError):
    """A nodefactor term references a node attribute the network lacks."""


class EnumerationLimitError(IAVMError, ValueError):
    """State space too large for exhaustive enumeration."""


class CoalescenceError(IAVMError, RuntimeError):
    """Coupling from the past did not coalesce within the epoch budget."""


class SeparationError(IAVMError, ArithmeticError):
    """Pseudolikelihood is unbounded (perfectly separated responses)."""


class ConvergenceError(IAVMError, RuntimeError):
    """An iterative solver hit its iteration cap."""


class DegenerateCovarianceError(IAVMError, ValueError):
    """Simulated statistics were constant at a design point."""


class DuplicateDesignError(IAVMError, ValueError):
    """Design matrix contains repeated rows."""


class OptimizerError(IAVMError, RuntimeError):
    """Every start of the hyperparameter optimisation failed."""


class DigestMismatchError(IAVMError, ValueError):
    """A stored artifact was produced for a different model or data set."""


class ConstantSeriesError(IAVMError, ValueError):
    """Diagnostic requested on a series with no variation."""


class ConfigError(IAVMError, ValueError):
    """Malformed or inconsistent experiment configuration."""
