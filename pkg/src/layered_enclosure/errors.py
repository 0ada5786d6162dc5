"""Exception hierarchy shared by all modules."""

import traceback
from pathlib import Path


class EnclosureError(Exception):
    """Base class for every error raised by the package."""

    module = "layered_enclosure"


class PreconditionError(EnclosureError, ValueError):
    """An argument violates the documented domain of an operation."""


class ConfigurationError(EnclosureError, ValueError):
    """A scenario or configuration cannot be realised as requested."""


class NumericalFailure(EnclosureError, RuntimeError):
    """An iterative or adaptive numerical method did not converge.

    Parameters
    ----------
    message : str
        Human readable description.
    estimates : tuple of float, optional
        The last estimates produced before giving up.
    """

    def __init__(self, message, estimates=()):
        super().__init__(message)
        self.estimates = tuple(estimates)


class ResolutionError(EnclosureError, ValueError):
    """A discretisation is too coarse for the requested quantity."""


class InstabilityError(EnclosureError, RuntimeError):
    """A time stepping run produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ContractError(EnclosureError, ValueError):
    """Two objects that must be compatible are not."""


def origin_module(exc: BaseException) -> str:
    """Name of the innermost package module in the traceback of ``exc``."""
    mod = "layered_enclosure"
    for fr in traceback.extract_tb(exc.__traceback__):
        p = Path(fr.filename)
        if p.parent.name == "layered_enclosure":
            mod = p.stem
    return mod
