"""Exception types shared across the package."""


class FewvoxError(Exception):
    """Base class for all package errors."""


class ValidationError(FewvoxError):
    """Bad inputs, violated preconditions, or malformed files.

    The CLI maps this to exit code 1; anything else that escapes is a
    runtime failure (exit code 2).
    """
