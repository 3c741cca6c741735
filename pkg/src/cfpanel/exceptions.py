"""Exception hierarchy."""


class CFPanelError(Exception):
    """Base class for toolkit errors."""


class PanelError(CFPanelError, ValueError):
    """Malformed or inconsistent panel input."""


class EstimationError(CFPanelError, RuntimeError):
    """An estimator could not produce a result."""


class ConfigError(CFPanelError, ValueError):
    """Invalid run configuration."""
