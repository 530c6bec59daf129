"""Exception hierarchy and process exit codes.

Every error raised by this package derives from UwsodError so the CLI can
map failures onto stable exit codes without enumerating call sites.
"""

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERIC = 2
EXIT_IO = 3


class UwsodError(Exception):
    """Base class for all package errors."""

    exit_code = EXIT_VALIDATION


class ValidationError(UwsodError):
    """Bad arguments, shapes, configuration values, or malformed inputs."""

    exit_code = EXIT_VALIDATION


class NumericError(UwsodError):
    """Non-finite values or numerically impossible states detected at runtime."""

    exit_code = EXIT_NUMERIC


class CheckpointError(UwsodError):
    """Corrupt, truncated, or incompatible checkpoint files."""

    exit_code = EXIT_IO


class DataError(UwsodError):
    """Unreadable or structurally invalid data files on disk."""

    exit_code = EXIT_IO


class GenerationError(UwsodError):
    """Synthetic scene generation failed to satisfy constraints."""

    exit_code = EXIT_VALIDATION
