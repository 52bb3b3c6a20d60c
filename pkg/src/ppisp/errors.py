# src/ppisp/errors.py
"""Exception hierarchy for ppisp.

Library code raises these; the CLI maps them onto exit codes
(2 usage/config, 3 I/O, 4 numeric failure).
"""

from typing import Optional


class PpispError(Exception):
    """Base class for all ppisp errors."""


class ImageError(PpispError, ValueError):
    """Image buffer violates its shape or value invariants."""


class ShapeMismatchError(PpispError, ValueError):
    """Two arrays that must be congruent are not."""


class PfmFormatError(PpispError, ValueError):
    """Malformed or unsupported PFM file."""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)


class DegenerateHomographyError(PpispError, ValueError):
    """Target chromaticities do not define a unique homography."""


class UndersizedImageError(PpispError, ValueError):
    """Image too small for the controller's pooling stages."""


class MetadataMismatchError(PpispError, ValueError):
    """Metadata vector length does not match the controller config."""


class UndefinedCorrelationError(PpispError, ValueError):
    """Correlation or fit requested on a zero-variance series."""


class ConfigError(PpispError, ValueError):
    """Invalid run configuration."""


class DatasetError(PpispError, OSError):
    """Dataset directory missing, unreadable, or with a bad layout."""


class NumericalFailure(PpispError, ArithmeticError):
    """Optimization produced a non-finite loss."""

    def __init__(self, iteration: int, block: Optional[str], message: str = "non-finite loss"):
        self.iteration = iteration
        self.block = block
        where = f" in parameter block '{block}'" if block else ""
        super().__init__(f"{message} at iteration {iteration}{where}")
