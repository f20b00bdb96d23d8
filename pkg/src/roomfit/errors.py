"""Exception types shared across the package."""


class RoomfitError(Exception):
    """Base class for all roomfit errors."""


class InvalidPolygonError(RoomfitError):
    """Vertex data cannot form a valid polygon."""


class DegenerateContourError(RoomfitError):
    """Simplification or merging collapsed a contour below 3 vertices."""


class EmptyMaskError(RoomfitError):
    """A segment mask contains no foreground pixels."""


class EmptySceneError(RoomfitError):
    """No usable input (segments, points, proposals) in the scene."""


class OnBoundaryError(RoomfitError):
    """Query point lies (numerically) on a polygon edge; caller should perturb."""


class ContractViolationError(RoomfitError):
    """An operation was called outside its documented contract."""


class BudgetExceededError(RoomfitError):
    """Exhaustive enumeration refused: solution space too large."""


class InputError(RoomfitError):
    """Bad user input: missing file, malformed flag, invalid config value."""


class ParseError(InputError):
    """A file failed to parse; message carries path and location context."""


class FormatVersionError(InputError):
    """A file declared an unsupported schema version."""


class InternalInvariantError(RoomfitError):
    """An internal consistency check failed (a bug, not a user error)."""
