"""Exception hierarchy shared across the package."""


class VibalignError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VibalignError, ValueError):
    """A configuration value is out of range or inconsistent."""


class InputError(VibalignError, ValueError):
    """Input data has the wrong shape or too few samples."""


class AcquisitionError(VibalignError, RuntimeError):
    """The image source or probe actuator failed mid-run."""
