"""Exception classes shared across the package."""


class WigError(Exception):
    """Base class for all wignet errors."""


class ShapeError(WigError, ValueError):
    """Operands have incompatible shapes or extents."""


class GraphError(WigError, RuntimeError):
    """Autodiff tape contract violated (non-scalar backward, untaped value, ...)."""


class FormatError(WigError, ValueError):
    """A file or byte stream does not match its declared format."""


class TrainingError(WigError, RuntimeError):
    """Training aborted (non-finite loss or gradient)."""
