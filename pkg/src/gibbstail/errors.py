"""Exception types shared across the package.

Every error that a caller is expected to handle programmatically lives here,
so the CLI can map exception classes to exit codes in one place.
"""

from __future__ import annotations


class GibbstailError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(GibbstailError):
    """Invalid or incomplete experiment configuration."""


class BoxTooSmall(GibbstailError):
    """Periodic construction requested on a torus with side <= 2 * interaction range."""


class PointOutsideBox(GibbstailError):
    """A configuration point falls outside the box it is claimed to live in."""


class NonErgodicSettings(ConfigError):
    """Chain settings that cannot explore the configuration space."""


class DimensionTooLarge(GibbstailError):
    """Quadrature request whose tensor-grid dimension exceeds the supported cap."""


class SingularPoint(GibbstailError):
    """Pointwise evaluation of a potential exactly at a singularity."""


class CutoffTooSmall(GibbstailError):
    """Field assembly cutoff too small for the exponential tail of the potential."""


class ShapeMismatch(GibbstailError):
    """Field array shape does not match the grid it is paired with."""


class FactorizationBreakdown(GibbstailError):
    """Symmetric factorization hit repeated zero pivots even after a shift retry."""


class NoConvergence(GibbstailError):
    """Iterative eigenvalue solve failed its residual or bracket certificate."""


class BelowOnset(GibbstailError):
    """Requested energy is below the invertibility onset of the depth curve."""


class NotInDq(GibbstailError):
    """Well combination produces no negative ground state at any sampled coupling."""


class GridTooLarge(GibbstailError):
    """Packing grid has more candidate points than the exact solver accepts."""


class TooManyWells(GibbstailError):
    """Well graph exceeds the size cap of the exact independent-set solver."""


class EmptyWindow(GibbstailError):
    """No usable data points remain in the requested fit window."""


class HypothesisUnmet(GibbstailError):
    """A structural hypothesis behind a predicted constant fails.

    The ``check`` attribute names the specific failed hypothesis so callers
    can report it without parsing the message.
    """

    def __init__(self, check: str, message: str):
        super().__init__(message)
        self.check = check
