"""Exception hierarchy.

Every error carries a short ``category`` string so the CLI can report failures
in a machine-readable way.
"""


class NearFieldError(Exception):
    category = "error"


class GeometryError(NearFieldError, ValueError):
    """Invalid or degenerate array/source geometry."""

    category = "geometry"


class GridError(NearFieldError, ValueError):
    category = "grid"


class ConfigError(NearFieldError, ValueError):
    category = "config"


class NoSourcesVisibleError(NearFieldError):
    """The angle spectrum carries no detectable peak."""

    category = "no-sources"


class DegenerateSubspaceWarning(UserWarning):
    """Signal and noise eigenvalues are too close to separate reliably."""
