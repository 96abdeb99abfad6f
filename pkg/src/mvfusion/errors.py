"""Exception and warning types shared across the package.

Everything that stems from bad user input (malformed files, out-of-range
arguments, degenerate scene specs) derives from :class:`InputError` so the
CLI can map it to exit code 2; anything else is treated as an internal
error (exit code 1).
"""


class InputError(ValueError):
    """Bad input from the caller: arguments, files, or configuration."""


class InvalidDepthError(InputError):
    """A depth value was zero or negative where a positive one is required."""


class OutOfBoundsError(InputError):
    """A pixel coordinate fell outside the image rectangle."""


class FormatError(InputError):
    """A binary or text artifact did not match its documented layout."""


class SceneLoadError(InputError):
    """A scene directory is missing files or contains unreadable ones."""


class ValidationError(InputError):
    """Loaded data violates a structural invariant (e.g. non-rigid pose)."""


class SpecError(InputError):
    """A synthetic-scene or pipeline spec is degenerate or malformed."""


class ReducedNeighborhoodWarning(UserWarning):
    """Fewer neighbors were available than requested; all were used."""
