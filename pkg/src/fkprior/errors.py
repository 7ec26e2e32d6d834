"""Error categories shared across modules.

The CLI maps these onto its exit-code contract: usage problems exit 2,
numeric failures 3, malformed files 4.
"""


class FormatError(ValueError):
    """Malformed file content (kernel text, model binary, netpbm image)."""


class InputError(ValueError):
    """Structurally valid but unusable inputs (size/scale mismatches)."""
