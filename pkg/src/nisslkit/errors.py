"""Exception types shared across the toolkit."""


class NisslkitError(Exception):
    """Base class for all toolkit errors (domain errors, CLI exit code 1)."""


class TaxonomyError(NisslkitError):
    """Malformed taxonomy or merge-policy input."""


class GeometryError(NisslkitError):
    """Invalid polygon or bounding-box input."""


class AnnotationError(NisslkitError):
    """Malformed section annotation or image/annotation mismatch."""


class ConfigError(NisslkitError):
    """Invalid pipeline configuration."""
