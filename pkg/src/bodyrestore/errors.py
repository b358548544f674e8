"""Exception types shared across the package.

Each maps to a distinct CLI exit code so batch scripts can branch on the
failure class.
"""


class ConfigError(ValueError):
    """Invalid or unknown configuration (CLI exit code 2)."""

    exit_code = 2


class MissingArtifactError(FileNotFoundError):
    """A required checkpoint, manifest, or file is absent or unusable (exit code 3)."""

    exit_code = 3


class NumericError(ArithmeticError):
    """Non-finite value encountered during training or sampling (exit code 4)."""

    exit_code = 4
