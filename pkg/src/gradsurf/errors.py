"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems are handled by argparse
(exit 2), CheckFailure exits 1, everything below exits 3.
"""


class GradsurfError(Exception):
    """Base class for all package errors."""


class DatasetError(GradsurfError):
    """Dataset layout, manifest, or image problems."""


class ConfigMismatchError(GradsurfError):
    """Incompatible configurations (checkpoint vs. trainer, operator vs. manifest)."""


class EmptyLevelSetError(GradsurfError):
    """The SDF has uniform sign on the sampled grid; no surface to extract."""


class CheckFailure(GradsurfError):
    """A verification command found a violated invariant."""
